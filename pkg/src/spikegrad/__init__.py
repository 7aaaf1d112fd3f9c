"""Online learning of precise spike-train transformations in feedforward
spiking networks, with a witness-based evaluation harness."""

from .kernels import (AhpParams, EPSILON_MS, EXCITATORY, INHIBITORY,
                      ImpactParams, PspParams, ahp_deriv, ahp_value,
                      impact_kernel, pair_kernel, psp_deriv, psp_value)
from .error import error_grad, error_grad_vector, error_value
from .network import Network, NeuronSpec, SimConfig, SynapseSpec, Topology
from .gradients import (LearnConfig, SpikeTape, apply_update, approx_partials,
                        intermediate_weight_grads, output_weight_grads,
                        record_tape, tape_view, weight_gradients)
from .experiments import (NetworkTemplate, PoissonSpec, PoissonStream,
                          RunReport, SuiteConfig, SuiteResult, WitnessPair,
                          build_topology, calibrate, gen_poisson, make_pair,
                          mape, run_pair, run_suite)

__version__ = "0.1.0"
