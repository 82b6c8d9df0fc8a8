from .moments import (LAYER_KINDS, Centered, McMoments, MomentPair, activation_moments,
                      affine_chain_moments, as_function, center, dense_init_scale, layer_moments,
                      max_order_moments, mc_moment_oracle)
from .network import InitPlan, LayerPlan, LayerSpec, NetworkSpec, propagate
