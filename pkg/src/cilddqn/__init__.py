"""Independent multiagent RL for weakly cooperative traffic signal control.

Subpackages by responsibility:
  nn        dense Q-network, manual backprop, Adam, checkpoints
  replay    experience memory with importance decay
  agents    CIL-DDQN and the IDDQN / LDQN ablations
  traffic   queue-based multi-intersection simulator and metrics
  twostep   two-step cooperative matrix game and exact oracles
  baselines fixed-time and demand-actuated controllers
  harness   training / evaluation / ablation / sweep orchestration
"""

__version__ = "0.1.0"
