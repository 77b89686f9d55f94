from .logistic import PARAMETER_NAMES, BENCHMARK_DESIGN, LogisticGrowthNlme, logistic_chart, logistic_pilot
from .sbm import BENCHMARK_ALPHA, BENCHMARK_P, Sbm, sbm_align_labels, sbm_chart
from .toy import ToyGaussian, toy_fim_oracle, toy_mle_oracle

__all__ = [
    "LogisticGrowthNlme",
    "BENCHMARK_ALPHA",
    "BENCHMARK_DESIGN",
    "BENCHMARK_P",
    "Sbm",
    "ToyGaussian",
    "PARAMETER_NAMES",
    "logistic_chart",
    "logistic_pilot",
    "sbm_align_labels",
    "sbm_chart",
    "toy_fim_oracle",
    "toy_mle_oracle",
]
