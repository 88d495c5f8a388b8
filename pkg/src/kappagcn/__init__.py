"""Graph convolutional networks on constant-curvature spaces.

Points live in the stereographic model of curvature ``kappa``: the
Poincare ball for ``kappa < 0``, flat space at ``kappa = 0`` and the
projected sphere for ``kappa > 0``.  All operations are smooth in
``kappa`` across zero, so curvature can be learned like any other weight.
"""
from .agg import gyromidpoint, left_matmul, right_matmul, tangential_agg
from .errors import (AntipodalError, ConfigError, DegenerateMidpointError, DomainError,
                     EndpointIndexError, InfeasibleSplitError, InsufficientGraphError,
                     KappaGCNError, NotScalarError, ParseError, ShapeError, ZeroWeightError)
from .graph import (Graph, bfs_all_pairs, estimate_curvature, gen_balanced_tree,
                    gen_geometric_graph, load_graph, make_split, normalize_adjacency, sbm,
                    write_graph)
from .manifold import (Isometry, atan_k, conformal_factor, distance, exp0, exp_map, gyration,
                       kappa_add, kappa_scale, log0, log_map, pairwise_distance, random_isometry,
                       tan_k)
from .model import ModelConfig, forward, init_params, kappa_logits, kgcn_layer, parse_manifold
from .train import (Adam, RunMetrics, distortion_loss, kappa_sweep, train_distortion,
                    train_nodeclass)

__version__ = "0.1.0"
