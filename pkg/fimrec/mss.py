"""Multi-view search: per-view relevance, Top-K selection, and target attention."""

from collections.abc import Callable
from dataclasses import dataclass

import torch
from torch import nn

from .config import VIEW_ORDER, MssConfig, ViewKey
from .embeddings import PriceBuckets
from .numerics import DTYPE
from .records import ATTRIBUTES, InteractionRecord, TargetItem

VIEW_ATTRIBUTE: dict[ViewKey, str] = {
    "author": "author_id",
    "brand": "brand",
    "category": "category",
    "price": "price",
}
SEQUENCE_VIEW = "sequence"

Scorer = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class ViewSelection:
    """Up to K positions per sequence, ascending in time where ``valid``."""

    view: str
    indices: torch.Tensor  # [..., K]
    valid: torch.Tensor  # [..., K]
    scores: torch.Tensor  # [..., K]


def score_hard(
    record: InteractionRecord,
    target: TargetItem,
    view: ViewKey,
    prices: PriceBuckets | None = None,
) -> int:
    """1 when the record matches the target on the view's attribute."""
    if view == "price":
        if prices is None:
            raise ValueError("the price view compares price buckets")
        return int(prices.bucket(record.price) == prices.bucket(target.price))
    attribute = VIEW_ATTRIBUTE[view]
    return int(getattr(record, attribute) == getattr(target, attribute))


def hard_scores(
    tokens: torch.Tensor, target: torch.Tensor, valid: torch.Tensor, view: ViewKey
) -> torch.Tensor:
    """Batched :func:`score_hard` over encoded indices; index 0 never matches."""
    column = ATTRIBUTES.index(VIEW_ATTRIBUTE[view])
    key = target[..., column].unsqueeze(-1)
    match = (tokens[..., column] == key) & (key != 0) & valid
    return match.to(DTYPE)


def score_soft(
    e_i: torch.Tensor, e_t: torch.Tensor, w_b: torch.Tensor, w_t: torch.Tensor
) -> torch.Tensor:
    """Inner product of the projected behavior and target embeddings."""
    if w_b.shape[0] != w_t.shape[0]:
        raise ValueError(
            f"projections disagree: {w_b.shape[0]} vs {w_t.shape[0]} outputs"
        )
    return ((e_i @ w_b.T) * (e_t @ w_t.T)).sum(-1)


def topk_select(
    scores: torch.Tensor,
    valid: torch.Tensor,
    k: int,
    *,
    hard: bool = False,
    view: str = "",
) -> ViewSelection:
    """Keep the K best-scoring positions, later positions winning ties.

    Hard mode keeps only matches, so fewer than K positions may survive.
    """
    if k < 1:
        raise ValueError(f"top_k must be positive, got {k}")
    if not bool(valid.any(-1).all()):
        raise ValueError("empty sequence after padding is masked")
    n = scores.shape[-1]
    k = min(k, n)
    ranked = scores.detach().masked_fill(~valid, float("-inf")).flip(-1)
    order = torch.sort(ranked, dim=-1, descending=True, stable=True).indices
    positions = n - 1 - order[..., :k]
    keep = valid.gather(-1, positions)
    if hard:
        keep = keep & (scores.detach().gather(-1, positions) > 0)
    time_order = torch.sort(positions.masked_fill(~keep, n), dim=-1).indices
    positions = positions.gather(-1, time_order)
    keep = keep.gather(-1, time_order)
    return ViewSelection(view, positions, keep, scores.gather(-1, positions))


def dot_scorer(query: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    return (keys * query.unsqueeze(-2)).sum(-1)


def attention_weights(
    query: torch.Tensor,
    keys: torch.Tensor,
    valid: torch.Tensor | None = None,
    scorer: Scorer | None = None,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Softmax weights over the valid keys; all-invalid rows get zero weights."""
    logits = (scorer or dot_scorer)(query, keys)
    if bias is not None:
        logits = logits + bias
    if valid is None:
        valid = torch.ones_like(logits, dtype=torch.bool)
    logits = logits.masked_fill(~valid, torch.finfo(logits.dtype).min)
    return torch.softmax(logits, dim=-1) * valid


def target_attention(
    query: torch.Tensor,
    keys: torch.Tensor,
    valid: torch.Tensor | None = None,
    scorer: Scorer | None = None,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Pool keys (used as values) with the target as the query."""
    if keys.shape[-2] == 0:
        return torch.zeros_like(query)
    weights = attention_weights(query, keys, valid, scorer, bias)
    return (weights.unsqueeze(-1) * keys).sum(-2)


class ActivationUnit(nn.Module):
    """Two-layer ReLU scorer over ``[q, k, q * k]``."""

    def __init__(self, dim: int, hidden: int) -> None:
        super().__init__()
        self.hidden = nn.Linear(3 * dim, hidden, dtype=DTYPE)
        self.out = nn.Linear(hidden, 1, dtype=DTYPE)

    def forward(self, query: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
        query = query.unsqueeze(-2).expand_as(keys)
        features = torch.cat([query, keys, query * keys], dim=-1)
        return self.out(torch.relu(self.hidden(features))).squeeze(-1)


class SoftProjection(nn.Module):
    """W_b and W_t of the soft relevance score."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.w_b = nn.Linear(dim, dim, bias=False, dtype=DTYPE)
        self.w_t = nn.Linear(dim, dim, bias=False, dtype=DTYPE)

    def forward(self, keys: torch.Tensor, query: torch.Tensor) -> torch.Tensor:
        return score_soft(keys, query.unsqueeze(-2), self.w_b.weight, self.w_t.weight)


class MultiViewSearch(nn.Module):
    """Per-view Top-K search and target attention, concatenated into H_u.

    Views run in the fixed order author, brand, category, price. With no view
    configured, one attention runs over the whole unpadded sequence.
    """

    def __init__(self, attr_dim: int, n_attributes: int, cfg: MssConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.attr_dim = attr_dim
        self.views: tuple[str, ...] = tuple(v for v in VIEW_ORDER if v in cfg.views)
        # The no-search attention always reads whole rows.
        whole = cfg.view_attrs == "all" or not self.views
        self.view_dim = attr_dim * n_attributes if whole else 2 * attr_dim
        units = self.views or (SEQUENCE_VIEW,)
        if cfg.attention == "mlp":
            self.attention = nn.ModuleDict(
                {
                    view: ActivationUnit(self.view_dim, cfg.attention_hidden)
                    for view in units
                }
            )
        else:
            self.attention = None
        soft = cfg.search_mode == "soft" and bool(self.views)
        if soft and cfg.share_projections:
            self.projections = nn.ModuleDict({"shared": SoftProjection(self.view_dim)})
        elif soft:
            self.projections = nn.ModuleDict(
                {view: SoftProjection(self.view_dim) for view in self.views}
            )
        else:
            self.projections = None

    @property
    def width(self) -> int:
        return max(len(self.views), 1) * self.view_dim

    def view_features(self, embedded: torch.Tensor, view: str) -> torch.Tensor:
        """The part of each embedded row a view attends over."""
        if self.cfg.view_attrs == "all" or view == SEQUENCE_VIEW:
            return embedded
        goods = embedded[..., : self.attr_dim]
        start = ATTRIBUTES.index(VIEW_ATTRIBUTE[view]) * self.attr_dim
        return torch.cat([goods, embedded[..., start : start + self.attr_dim]], -1)

    def select(
        self,
        view: ViewKey,
        keys: torch.Tensor,
        query: torch.Tensor,
        tokens: torch.Tensor,
        target: torch.Tensor,
        valid: torch.Tensor,
    ) -> ViewSelection:
        if self.projections is None:
            scores = hard_scores(tokens, target, valid, view)
            return topk_select(scores, valid, self.cfg.top_k, hard=True, view=view)
        key = "shared" if self.cfg.share_projections else view
        scores = self.projections[key](keys, query)
        return topk_select(scores, valid, self.cfg.top_k, view=view)

    def forward(
        self,
        embedded: torch.Tensor,
        target_embedded: torch.Tensor,
        tokens: torch.Tensor,
        target: torch.Tensor,
        valid: torch.Tensor,
    ) -> torch.Tensor:
        if not self.views:
            return target_attention(
                target_embedded, embedded, valid, self._scorer(SEQUENCE_VIEW)
            )
        outputs = []
        for view in self.views:
            keys = self.view_features(embedded, view)
            query = self.view_features(target_embedded, view)
            selection = self.select(view, keys, query, tokens, target, valid)
            index = selection.indices.unsqueeze(-1).expand(-1, -1, keys.shape[-1])
            chosen = keys.gather(-2, index)
            # Soft relevance joins the attention logits so W_b and W_t train.
            bias = selection.scores if self.projections is not None else None
            outputs.append(
                target_attention(
                    query, chosen, selection.valid, self._scorer(view), bias
                )
            )
        return torch.cat(outputs, dim=-1)

    def _scorer(self, view: str) -> Scorer | None:
        return None if self.attention is None else self.attention[view]


def multi_view_forward(
    search: MultiViewSearch,
    embedded: torch.Tensor,
    target_embedded: torch.Tensor,
    tokens: torch.Tensor,
    target: torch.Tensor,
    valid: torch.Tensor,
) -> torch.Tensor:
    """H_u for a batch: the concatenated per-view attention outputs."""
    return search(embedded, target_embedded, tokens, target, valid)
