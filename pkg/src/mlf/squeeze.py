"""Patch squeeze: compress each period's patch tokens, and decode them back.

A single linear map (shared by every period) shrinks the patch-index axis
from N to N/r before attention, cutting the token count the encoder sees.
Per-period decoders expand the squeezed embeddings back to raw-patch shape;
their reconstruction error is the auxiliary training loss that forces the
surviving tokens to keep the period's information.
"""

from __future__ import annotations

from .autograd import Tensor, concat, mse, narrow, relu
from .layers import ChannelLinear, Linear, ParamStore


class PatchEncoder:
    """The shared squeeze map: one linear layer along the patch axis."""

    def __init__(self, store: ParamStore, name: str, n_patches: int, n_squeezed: int):
        self.n_patches = n_patches
        self.n_squeezed = n_squeezed
        self.lin = Linear(store, name, n_patches, n_squeezed)

    def __call__(self, x: Tensor) -> Tensor:
        # (B, D, N) -> (B, D, N/r); every embedding row shares the map.
        return self.lin(x)


class PeriodDecoder:
    """Expand one period's squeezed embeddings back to its raw patches.

    Two single-hidden-layer MLPs: the first restores the patch count along
    the token axis, the second maps embedding dimension to patch length.
    Hidden widths are max(input, output).
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        d_model: int,
        patch_len: int,
        n_patches: int,
        n_squeezed: int,
    ):
        hidden_n = max(n_squeezed, n_patches)
        self.count_in = Linear(store, f"{name}.count_in", n_squeezed, hidden_n)
        self.count_out = Linear(store, f"{name}.count_out", hidden_n, n_patches)
        hidden_l = max(d_model, patch_len)
        self.len_in = ChannelLinear(store, f"{name}.len_in", d_model, hidden_l)
        self.len_out = ChannelLinear(store, f"{name}.len_out", hidden_l, patch_len)

    def __call__(self, x: Tensor) -> Tensor:
        # (B, D, N/r) -> (B, D, N) -> (B, L, N)
        h = self.count_out(relu(self.count_in(x)))
        return self.len_out(relu(self.len_in(h)))


def concat_periods(squeezed: list[Tensor]) -> Tensor:
    """Join per-period token blocks, shortest period first, along the token axis."""
    if len(squeezed) == 1:
        return squeezed[0]
    return concat(squeezed, axis=-1)


def split_periods(tokens: Tensor, block_sizes: list[int]) -> list[Tensor]:
    """Inverse of concat_periods: cut the token axis back into period blocks."""
    total = tokens.shape[-1]
    if sum(block_sizes) != total:
        raise ValueError(f"token count {total} does not match period blocks {block_sizes}")
    out = []
    offset = 0
    for size in block_sizes:
        out.append(narrow(tokens, -1, offset, size))
        offset += size
    return out


def reconstruction_loss(reconstructed: list[Tensor], raw: list[Tensor]) -> Tensor:
    """Mean over periods of the per-period raw-patch MSE."""
    if len(reconstructed) != len(raw):
        raise ValueError(f"got {len(reconstructed)} reconstructions for {len(raw)} patch sets")
    total = mse(reconstructed[0], raw[0])
    for rec, ref in zip(reconstructed[1:], raw[1:]):
        total = total + mse(rec, ref)
    return (1.0 / len(raw)) * total
