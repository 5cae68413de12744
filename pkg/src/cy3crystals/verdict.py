"""Pass/fail verdicts for the verification batteries."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Verdict:
    name: str
    passed: bool
    worst_deficit: int = 0
    location: dict | None = None
    note: str = ""

    def to_json(self) -> dict:
        out = {"pass": self.passed, "worst_valuation_deficit": self.worst_deficit,
               "location": self.location}
        if self.note:
            out["note"] = self.note
        return out

    def __str__(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f" deficit={self.worst_deficit} at {self.location}" if not self.passed else ""
        return f"[{tag}] {self.name}{extra}"


def from_deficit(name: str, deficit: int, location, note: str = "") -> Verdict:
    return Verdict(name, deficit == 0, deficit, location if deficit else None, note)


def report_json(verdicts: list[Verdict]) -> dict:
    return {v.name: v.to_json() for v in verdicts}


def all_passed(verdicts: list[Verdict]) -> bool:
    return all(v.passed for v in verdicts)
