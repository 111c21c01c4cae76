from __future__ import annotations


class ParseError(ValueError):
    """Input document is not well-formed (bad JSON, wrong types, missing keys)."""


class ValidationError(ValueError):
    """Input is well-formed but violates a model invariant.

    ``rule`` names the violated invariant (e.g. ``"size match"``).
    """

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        self.detail = detail
        super().__init__(f"{rule}: {detail}" if detail else rule)
