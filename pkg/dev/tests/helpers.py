"""Small models shared by the tests."""

import torch
import torch.nn as nn


class ToyClassifier(nn.Module):
    """Flatten + tanh hidden layer + linear head, with the attributes the package reads."""

    def __init__(self, input_shape=(3, 8, 8), num_classes=10):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        c, h, w = input_shape
        self.body = nn.Linear(c * h * w, 16)
        self.fc = nn.Linear(16, num_classes)

    def forward(self, x):
        return self.fc(torch.tanh(self.body(torch.flatten(x, 1))))


class UniformClassifier(nn.Module):
    """Constant zero logits: every softmax is uniform."""

    def __init__(self, input_shape=(3, 8, 8), num_classes=10):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.scale = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return torch.zeros(x.shape[0], self.num_classes, dtype=x.dtype, device=x.device) * self.scale


class LookupClassifier(nn.Module):
    """Predicts the class stored in pixel [0, 0, 0] (rounded), for hand-built fixtures."""

    def __init__(self, input_shape=(1, 2, 2), num_classes=10):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        idx = x[:, 0, 0, 0].round().long().clamp(0, self.num_classes - 1)
        logits = torch.zeros(x.shape[0], self.num_classes, dtype=x.dtype, device=x.device)
        logits[torch.arange(x.shape[0]), idx] = 1.0
        return logits + 0 * self.dummy
