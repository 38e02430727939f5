"""Off-policy actor-critic training with online hyper-parameter tuning.

Subpackages:
  net      - dense-network engine (forward, exact backprop, Adam, Polyak)
  envs     - built-in continuous-control tasks + delayed-reward wrapper
  replay   - shared n-step replay buffer
  td3      - twin-critic, delayed-actor update rule
  tuners   - ES / CEM / score-function hyper-parameter adaptation
  metagrad - meta-gradient learning-rate baseline
  harness  - evaluation, normalized scores, gradient-estimator verification
  cli      - experiment runner (run / prop1 / stats)
"""

__version__ = "0.1.0"
