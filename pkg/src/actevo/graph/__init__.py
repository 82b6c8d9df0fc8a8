from .construct import (build_indicator, cafe_depth, core_unit, enumerate_s1,
                        indicator_reference, random_cafe_tree, random_initial_graph)
from .evaluate import (DualResult, eval_dual, eval_scalar, evaluate, evaluate_dual,
                       is_smooth_point)
from .fingerprint import Fingerprint, fingerprint, probe_inputs
from .graph import (GRANULARITIES, PARAM_LABELS, X, AfnGraph, Op, Param, ParamSite, format_node,
                    parse, replace_at, strip_params)
from .operators import (CAFE, CAFE_EPS, PANGAEA, SATURATION, Operator, OperatorTable, cafe_table,
                        get_table, pangaea_table)
