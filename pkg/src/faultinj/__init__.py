"""
Fault injection module - the random bit-flip fault model.

- injector.py : inject / inject_bit, flip masks, InjectionLog, fault_class
- plan.py     : FaultPlan, hook points, transient reads, apply_fault_plan
"""
from src.faultinj.injector import (
    FaultClass,
    InjectionLog,
    InjectionRecord,
    apply_flip_mask,
    draw_flip_mask,
    fault_class,
    inject,
    inject_bit,
)
from src.faultinj.plan import (
    FaultPlan,
    HookContext,
    HookPoint,
    HookResult,
    ReadFault,
    apply_fault_plan,
    hook_for,
    prepare_read,
)

__all__ = [
    "FaultClass",
    "InjectionLog",
    "InjectionRecord",
    "apply_flip_mask",
    "draw_flip_mask",
    "fault_class",
    "inject",
    "inject_bit",
    "FaultPlan",
    "HookContext",
    "HookPoint",
    "HookResult",
    "ReadFault",
    "apply_fault_plan",
    "hook_for",
    "prepare_read",
]
