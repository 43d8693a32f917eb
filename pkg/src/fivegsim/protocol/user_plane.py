"""User-plane security policy and its application to data radio bearers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Requirement(str, Enum):
    REQUIRED = "required"
    PREFERRED = "preferred"
    NOT_NEEDED = "not-needed"


@dataclass(frozen=True)
class UpSecurityPolicy:
    integrity: Requirement = Requirement.REQUIRED
    confidentiality: Requirement = Requirement.REQUIRED
    origin: str = "home-smf"

    @classmethod
    def parse(cls, data: dict, origin: str = "home-smf") -> UpSecurityPolicy:
        return cls(Requirement(data["integrity"]), Requirement(data["confidentiality"]), origin)

    def to_fields(self) -> dict:
        return {"integrity": self.integrity.value, "confidentiality": self.confidentiality.value}


@dataclass(frozen=True)
class DrbConfig:
    integrity: bool
    ciphering: bool
    origin: str


def _activated(req: Requirement) -> bool:
    # "preferred" is honoured: the simulated gNB always has the resources.
    return req is not Requirement.NOT_NEEDED


def apply_up_policy(
    home: UpSecurityPolicy,
    local_override: str | Requirement | None,
    audit: list[dict],
    *,
    session: str = "",
) -> DrbConfig:
    """Turn the SMF policy for a PDU session into DRB protection flags.

    A local SMF may replace the home confidentiality choice (and only
    that); every override is appended to ``audit``.
    """
    policy = home
    if local_override is not None:
        override = Requirement(local_override)
        policy = UpSecurityPolicy(home.integrity, override, "local-smf-override")
        audit.append({
            "event": "local-smf-override",
            "session": session,
            "field": "confidentiality",
            "home": home.confidentiality.value,
            "local": override.value,
        })
    return DrbConfig(_activated(policy.integrity), _activated(policy.confidentiality), policy.origin)
