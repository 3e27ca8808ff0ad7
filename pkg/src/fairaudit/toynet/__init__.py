"""Desk-scale fusion heads with manual gradients, adversarial debiasing,
synthetic bias scenarios, and the training loop that ties them together."""

from .models import (
    AdversaryConfig,
    AdversaryParams,
    AgfParams,
    LwfParams,
    agf_backward,
    agf_forward,
    grl_grad,
    init_adversary,
    init_agf,
    init_lwf,
    lwf_backward,
    lwf_forward,
    total_loss,
)
from .gradcheck import finite_diff_check
from .scenario import SCENARIOS, ScenarioConfig, ScenarioData, SubgroupBias, scenario_config, synth_scenario
from .train import DynamicWeighting, TrainResult, modality_weight_report, train

__all__ = [
    "AdversaryConfig", "AdversaryParams", "AgfParams", "LwfParams",
    "agf_backward", "agf_forward", "grl_grad", "init_adversary", "init_agf",
    "init_lwf", "lwf_backward", "lwf_forward", "total_loss",
    "finite_diff_check",
    "SCENARIOS", "ScenarioConfig", "ScenarioData", "SubgroupBias",
    "scenario_config", "synth_scenario",
    "DynamicWeighting", "TrainResult", "modality_weight_report", "train",
]
