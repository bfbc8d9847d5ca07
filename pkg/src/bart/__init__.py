"""Belief-network toolkit: model language, compiler, exact inference,
taxonomies, influence diagrams, and an establish-refine classifier."""

__version__ = "0.1.0"

from .classifier import ClassificationReport, Controller, ControllerConfig, DataFeed  # noqa: F401
from .compiler import (  # noqa: F401
    CompiledModel,
    CompileOptions,
    GateSpec,
    aggregate,
    compile_file,
    compile_modelset,
    compile_network,
    detect_loops,
    expand_gate,
    load,
    save,
)
from .engine import ImpactReport, Session, open_session  # noqa: F401
from .influence import (  # noqa: F401
    InfluenceDiagram,
    PolicyResult,
    evaluate_policy,
    solve,
    to_belief_network,
)
from .lang import ModelSet, expand_templates, parse, serialize  # noqa: F401
from .model import (  # noqa: F401
    BeliefNetwork,
    Cpt,
    Evidence,
    Instantiated,
    LikelihoodVector,
    Node,
    Prior,
    Variable,
    Virtual,
    joint_enumerate,
    joint_mpe,
    validate,
)
from .taxonomy import ClassEvidence, Taxonomy, TaxonomySpec  # noqa: F401
