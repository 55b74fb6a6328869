from .ir import (
    BINARY_OPS,
    COND_OPS,
    Const,
    FieldId,
    MirFunction,
    MirProgram,
    MirStatement,
    UNARY_OPS,
    Var,
    def_use,
    format_statement,
    print_mir,
)
from .parser import MirParseError, parse_mir
from .cfg import (
    CallGraph,
    Cfg,
    build_call_graph,
    build_cfg,
    control_dependence,
    dominators,
    idom_map,
    postdominators,
)
from .eval import (
    DivisionByZero,
    EvalError,
    ExternCall,
    OutOfBoundsArrayAccess,
    RunResult,
    UnboundInput,
    run_program,
)
