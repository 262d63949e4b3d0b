"""Model-free single-loop entropy-regularized inverse reinforcement learning on finite MDPs."""
