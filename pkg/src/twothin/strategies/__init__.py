"""Decision policies and their parameter schedules."""

from .base import Policy, Rule, Segment, SingleRulePolicy, ThinningRule, limited
from .basic import (AcceptAll, OnePlusBeta, RealizedDistribution, Realize, RejectAll,
                    RelativeThreshold, Threshold, TwoChoice, accept_all_policy,
                    baseline_policies, realize_distribution, reject_all_policy,
                    relative_threshold_policy, threshold_policy)
from .multiscale import (LongTermPolicy, QMultiScalePolicy, d_multiscale_longterm_policy,
                         q_multi_scale_policy)
from .multistage import (DriftMultiStagePolicy, HeavySets, MultiStagePolicy, MultiStageRule,
                         drift_multi_stage_policy, multi_stage_policy)
from .schedule import (ParameterSchedule, iterated_logs, longterm_schedule,
                       multi_stage_schedule, q_multi_scale_schedule)

__all__ = [
    "Policy", "Rule", "Segment", "SingleRulePolicy", "ThinningRule", "limited",
    "AcceptAll", "OnePlusBeta", "RealizedDistribution", "Realize", "RejectAll",
    "RelativeThreshold", "Threshold", "TwoChoice", "accept_all_policy", "baseline_policies",
    "realize_distribution", "reject_all_policy", "relative_threshold_policy",
    "threshold_policy", "LongTermPolicy", "QMultiScalePolicy",
    "d_multiscale_longterm_policy", "q_multi_scale_policy", "DriftMultiStagePolicy",
    "HeavySets", "MultiStagePolicy", "MultiStageRule", "drift_multi_stage_policy",
    "multi_stage_policy", "ParameterSchedule", "iterated_logs", "longterm_schedule",
    "multi_stage_schedule", "q_multi_scale_schedule",
]
