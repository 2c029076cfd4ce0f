"""Binary, multivalued and vector consensus plus result dissemination."""
from .binary import BinaryConsensus, converge_step, decide_step, lock_step
from .manager import ConsensusHandle, ConsensusManager, NotInSink, SinkUnavailable
from .messages import (BOT, BinDecided, BinPhase, Decision, MvMessage, Phase, ResultQuery, VecEntry,
                       VecRow, decode_row, encode_row, make_bin_phase, make_mv_message,
                       sign_vec_entry)
from .multivalued import MultivaluedConsensus, binary_child, majority_value
from .validation import (MAX_PROPOSAL_BYTES, check_bin_decided, check_bin_phase, check_mv,
                         check_vec_row, justification_reason)
from .vector import VectorConsensus, mv_child

__all__ = [
    "BOT", "BinDecided", "BinPhase", "BinaryConsensus", "ConsensusHandle", "ConsensusManager",
    "Decision", "MAX_PROPOSAL_BYTES", "MultivaluedConsensus", "MvMessage", "NotInSink", "Phase",
    "ResultQuery", "SinkUnavailable", "VecEntry", "VecRow", "VectorConsensus", "binary_child",
    "check_bin_decided", "check_bin_phase", "check_mv", "check_vec_row", "converge_step",
    "decide_step", "decode_row", "encode_row", "justification_reason", "lock_step",
    "majority_value", "make_bin_phase", "make_mv_message", "mv_child", "sign_vec_entry",
]
