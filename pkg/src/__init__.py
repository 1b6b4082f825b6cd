"""
Source code root package.

This package contains all simulator source code organized by responsibility:
- core/      : Configuration, logging, exceptions and shared validators
- models/    : Pydantic models for training configs, fault specs and campaigns
- fxp/       : Fixed-point formats and code tensors
- gridworld/ : 10x10 maze maps, observations and the step function
- policy/    : Quantized MLP policies and the parameter snapshot codec
- fedtrain/  : Agents, the server and the federated training loop
- faultinj/  : Bit-flip injection and fault plans
- guard/     : Reward-drop detection, checkpoints, recovery and range screening
- harness/   : Campaigns, statistics, bundles, reports and the CLI
"""
