"""Mutual information of sparse random factor graph codes.

Exact small-instance oracles, teacher-student sampling, population
dynamics for the variational formula, and the graph experiments behind it.
"""
from .cavity import (Estimate, Population, SolverSettings, b_functional, big_lambda,
                     closed_form_forest, gamma_correction, mi_predict_general, pd_step,
                     solve_sup)
from .experiments import (CouplingReport, InterpolationPoint, coupled_generate,
                          coupling_scaling_stat, interpolation_free_energy,
                          interpolation_sample)
from .gibbs import (gibbs_expectation, gibbs_marginals, log_partition_function,
                    partition_function, symmetry_metric)
from .graphs import (SPINS, Alphabet, DegreeDistribution, DegreeSequence, FactorGraph,
                     LayerPlan, SocketExhaustion, WeightFamily, WeightFunction,
                     alpha_beta_plan, configuration_model, layered_model,
                     sample_d_partition, tv_shift_distance, xi_of_family)
from .ldgm import (check_pos_general, check_pos_moments, check_sym, code_weight_family,
                   encode_transmit, exact_code_mi, l_functional, mi_predict_codes)
from .planted import (conditional_entropy_mc, nishimori_gap, pin_graph, sample_pin_set,
                      sample_planted)

__version__ = "0.1.0"
