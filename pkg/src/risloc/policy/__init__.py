from .network import (
    EpisodeTrace,
    LSTMState,
    PolicyWeights,
    Rollout,
    init_policy,
    initial_theta,
    loss_average,
    loss_final,
    lstm_step,
    position_head,
    ris_head,
    rollout,
    run_episode,
    run_episodes,
)
from .training import train
