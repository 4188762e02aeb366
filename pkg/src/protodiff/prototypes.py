"""Non-learnable class prototypes and prototype-anchored contrastive losses.

Pixel embeddings come from a lightweight linear projection of the label
latent followed by per-pixel l2 normalization.  Each class c owns K unit
prototypes; a pixel of class c is assigned to its most cosine-similar
prototype.  The inter-class loss pulls the pixel toward its assigned
prototype against all prototypes of *other* classes; the intra-class
loss is the squared cosine distance to the assigned prototype.
Prototypes are updated online by exponential moving average toward the
mean of their assigned embeddings and renormalized.
"""

from __future__ import annotations

import warnings

import torch
import torch.nn as nn


class LatentProjector(nn.Module):
    """1x1 linear projection + per-pixel l2 normalization."""

    def __init__(self, in_channels: int, out_channels: int = 16):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(z).all():
            raise ValueError("non-finite values in projector input")
        y = self.conv(z)
        norms = y.norm(dim=1, keepdim=True)
        zero = norms == 0
        if zero.any():
            # degenerate pixels map to a fixed unit basis vector
            warnings.warn("zero-norm pixel embedding replaced by basis vector", RuntimeWarning)
            basis = torch.zeros_like(y)
            basis[:, 0] = 1.0
            y = torch.where(zero, basis, y)
            norms = torch.where(zero, torch.ones_like(norms), norms)
        return y / norms


class PrototypeBank:
    """C x K x D unit-norm prototypes with temperature tau and momentum mu.

    The bank is never touched by the optimizer; the only writer is
    :meth:`update`, which replaces the prototype tensor in one assignment.
    """

    def __init__(
        self,
        num_classes: int,
        K: int = 10,
        dim: int = 16,
        tau: float = 0.1,
        mu: float = 0.999,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        if K < 1:
            raise ValueError(f"need K >= 1 prototypes per class, got {K}")
        if tau <= 0:
            raise ValueError(f"temperature tau must be > 0, got {tau}")
        if not 0.0 <= mu < 1.0:
            raise ValueError(f"momentum mu must lie in [0, 1), got {mu}")
        self.num_classes = num_classes
        self.K = K
        self.dim = dim
        self.tau = float(tau)
        self.mu = float(mu)
        gen = torch.Generator().manual_seed(seed)
        protos = torch.randn(num_classes, K, dim, generator=gen, dtype=torch.float64)
        protos = protos / protos.norm(dim=-1, keepdim=True)
        self.protos = protos.to(dtype)

    def _flat(self) -> torch.Tensor:
        return self.protos.reshape(self.num_classes * self.K, self.dim)

    def assign(self, embeddings: torch.Tensor, classes: torch.Tensor) -> torch.Tensor:
        """Most-similar prototype index within each pixel's class.

        embeddings: (N, D) unit vectors; classes: (N,) ints.
        Ties break to the lowest k.
        """
        sims = torch.einsum("nd,nkd->nk", embeddings, self.protos[classes])
        return sims.argmax(dim=1)

    def inter_loss(self, embeddings: torch.Tensor, classes: torch.Tensor, ks: torch.Tensor) -> torch.Tensor:
        """Per-pixel contrastive loss against other-class prototypes.

        The positive is the assigned prototype; the negative set holds
        every prototype of the other classes.  Same-class non-assigned
        prototypes appear in neither numerator nor denominator.
        Returns (N,) losses.
        """
        n = embeddings.shape[0]
        sims = embeddings @ self._flat().T / self.tau  # (N, C*K)
        flat_idx = classes * self.K + ks
        pos = sims.gather(1, flat_idx.view(-1, 1)).squeeze(1)  # (N,)
        class_of_col = torch.arange(self.num_classes * self.K, device=sims.device) // self.K
        same_class = class_of_col.view(1, -1) == classes.view(-1, 1)  # (N, C*K)
        negs = sims.masked_fill(same_class, float("-inf"))
        logits = torch.cat([pos.view(-1, 1), negs], dim=1)
        return torch.logsumexp(logits, dim=1) - pos

    def intra_loss(self, embeddings: torch.Tensor, classes: torch.Tensor, ks: torch.Tensor) -> torch.Tensor:
        """Squared cosine distance to the assigned prototype, (N,)."""
        p = self.protos[classes, ks]
        return (1.0 - (embeddings * p).sum(dim=-1)) ** 2

    @torch.no_grad()
    def update(
        self,
        embeddings: torch.Tensor,
        classes: torch.Tensor,
        ks: torch.Tensor,
        mu: float | None = None,
    ) -> None:
        """EMA step toward the mean of assigned embeddings, then renormalize.

        Pairs (c, k) with no assigned pixel stay bitwise unchanged.
        Assignments must come from the pre-update bank.
        """
        if mu is None:
            mu = self.mu
        if not 0.0 <= mu < 1.0:
            raise ValueError(f"momentum mu must lie in [0, 1), got {mu}")
        flat = self._flat()
        flat_idx = classes * self.K + ks
        sums = torch.zeros_like(flat)
        sums.index_add_(0, flat_idx, embeddings.detach().to(flat.dtype))
        counts = torch.bincount(flat_idx, minlength=flat.shape[0]).to(flat.dtype)
        touched = counts > 0
        means = sums[touched] / counts[touched].unsqueeze(1)
        blended = mu * flat[touched] + (1.0 - mu) * means
        blended = blended / blended.norm(dim=-1, keepdim=True)
        new_flat = flat.clone()
        new_flat[touched] = blended
        self.protos = new_flat.reshape(self.num_classes, self.K, self.dim)
