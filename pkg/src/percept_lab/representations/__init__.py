"""Objective-state approximations: response codecs, interning, and the
machine/history belief views."""

from .codecs import (
    AgentProfile,
    DecodeError,
    EncodeError,
    OutOfProfile,
    ProfileViolation,
    StateVector,
    decode_verbatim,
    encode_static_elim,
    encode_verbatim,
    reconstruct_static,
    static_elim_layout,
)
from .interning import (
    DEFAULT_CAPACITIES,
    IndexedCodec,
    IndexedCodecConfig,
    IndexRegistry,
    SideChannelRecord,
    StaleIndexError,
    SupplementarySideChannel,
    encode_indexed,
    intern,
    log2_bucket,
    resolve,
)
from .views import (
    MachineRecord,
    RestructuredWorld,
    ServiceHistory,
    ServiceHistoryRecord,
    apply_to_history,
    apply_to_restructured,
    fnv1a64,
    state_key,
    time_bucket,
)
from .adapters import (
    ChainRep,
    HistoryRep,
    IndexedRep,
    Representation,
    RestructuredHistoryRep,
    RestructuredRep,
    StaticElimRep,
    VerbatimRep,
    known_selectors,
    make_representation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
