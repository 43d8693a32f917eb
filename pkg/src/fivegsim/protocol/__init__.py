from .messages import MessageKind, ProtocolMessage, open_sealed, seal
from .network import NetworkState, network_step
from .pki import Verdict, verify_preauth_signature
from .procedures import AkaResult, ContextMode, establish_contexts, handover, run_aka
from .ue import Phase, Trigger, UeState, ue_step
from .user_plane import DrbConfig, UpSecurityPolicy, apply_up_policy

__all__ = [
    "AkaResult",
    "ContextMode",
    "DrbConfig",
    "MessageKind",
    "NetworkState",
    "Phase",
    "ProtocolMessage",
    "Trigger",
    "UeState",
    "UpSecurityPolicy",
    "Verdict",
    "apply_up_policy",
    "establish_contexts",
    "handover",
    "network_step",
    "open_sealed",
    "run_aka",
    "seal",
    "ue_step",
    "verify_preauth_signature",
]
