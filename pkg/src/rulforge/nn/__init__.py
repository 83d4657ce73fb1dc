"""Small double-precision neural network stack with hand-written gradients."""

from rulforge.nn.layers import (
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    LstmState,
    LstmWeights,
    MaxPool1D,
    Reshape,
    dropout_forward,
    lstm_step,
)
from rulforge.nn.network import (
    Network,
    build_cnn_baseline,
    build_lstm_baseline,
    build_network,
    build_rulnet,
)
from rulforge.nn.optim import Adam, AdamConfig, AdamMoments, adam_step
from rulforge.nn.train import TrainingConfig, TrainingResult, mse, train_network

__all__ = [
    "LSTM", "Conv1D", "Dense", "Dropout", "Flatten", "LstmState", "LstmWeights", "MaxPool1D",
    "Reshape", "dropout_forward", "lstm_step", "Network", "build_cnn_baseline",
    "build_lstm_baseline", "build_network", "build_rulnet", "Adam", "AdamConfig", "AdamMoments",
    "adam_step", "TrainingConfig", "TrainingResult", "mse", "train_network",
]
