"""Payload-adaptive locomotion for a planar quadruped.

A self-contained stack: sagittal-plane rigid-body simulation with
spring-damper contact, a from-scratch neural-network core, a two-phase
nominal+adaptive policy trainer, an evaluation harness, and a live
telemetry/command bridge for an operator console.
"""

__version__ = "0.1.0"
