"""lcekit: runtime and data pipeline for interleaved text/code/execution
math solving against any completion model with a persistent code kernel."""

from .answers import (
    AnswerValue,
    DecimalAnswer,
    EqConfig,
    IntegerAnswer,
    RationalAnswer,
    SymbolicAnswer,
    answers_equivalent,
    extract_final_answer,
    normalize_answer,
    render_answer,
)
from .dataset import (
    ByteTokenizer,
    CandidateSolution,
    PackedSequence,
    ProblemRecord,
    ProblemSource,
    TrainingInstance,
    assign_consensus,
    build_difficulty_prompt,
    build_interpolation_prompt,
    consistency_filter,
    filter_seed,
    make_training_instance,
    pack,
    parse_difficulty_verdict,
)
from .executor import (
    ExecStatus,
    ExecutionResult,
    KernelSession,
    close_session,
    render_for_model,
    start_session,
)
from .format import (
    DEFAULT_TOKENS,
    BlockKind,
    Conversation,
    LceBlock,
    Message,
    Role,
    SpecialTokenSet,
    StreamScanner,
    parse,
    serialize,
)
from .orchestrator import (
    GenerationConfig,
    HttpCompletionClient,
    ModelClient,
    SolveTrace,
    Termination,
    format_prompt,
    solve,
)

__version__ = "0.1.0"
