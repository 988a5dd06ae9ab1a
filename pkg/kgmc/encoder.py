"""
    kgmc.encoder
    ~~~~~~~~~~~~

    Contains the graph encoder: 1-hop and attentive multi-hop aggregation layers, a feature mixer,
    the gate combining them, the alignment losses and the training loop.
"""
import collections
import csv
import dataclasses
import json
import logging
import typing

import numpy

from . import autograd, config, exceptions, hints, kgraph, timeouts
from .autograd import Tensor

__all__ = ['GraphTensors', 'EncoderParams', 'EmbeddingTable', 'EmbeddingSet', 'RelationEncoding', 'Encoder',
           'TrainingRecord', 'prepare_graph', 'gnn_layer_forward', 'attention_weights', 'multi_hop_layer_forward',
           'mixer_forward', 'gate_mix', 'gate_combine', 'final_embedding', 'encode', 'relation_encoding',
           'contrastive_loss', 'semantic_loss', 'total_loss', 'objective', 'sample_negatives', 'train']

log = logging.getLogger(__name__)

#: Format tag written into checkpoints.
CHECKPOINT_FORMAT = 'kgmc-checkpoint'

#: Negative slope of the attention score activation.
ATTENTION_SLOPE = 0.2

#: Variance floor of layer normalization.
NORM_EPS = 1e-5

#: Norm under which an embedding block is treated as zero.
ZERO_NORM = 1e-12

_LAYER_PARAMETERS = ('W_s', 'W', 'b', 'W_k', 'b_k', 'M_c', 'M', 'W_gate1', 'W_gate2', 'b_gate')
_MIXER_PARAMETERS = ('W_token1', 'W_token2', 'W_channel1', 'W_channel2', 'W_out', 'b_out')


@dataclasses.dataclass(frozen=True)
class GraphTensors:
    """
    Index arrays of a knowledge graph precomputed for aggregation.

    Edges are stored as (target row, source row) pairs so that messages flow from source to target.
    """
    n: int
    features: numpy.ndarray
    edge_target: numpy.ndarray
    edge_source: numpy.ndarray
    edge_coef: numpy.ndarray
    degree: numpy.ndarray
    hop_target: numpy.ndarray
    hop_source: numpy.ndarray
    hop_coef: numpy.ndarray
    hop_count: numpy.ndarray
    triple_head: numpy.ndarray
    triple_tail: numpy.ndarray
    triple_rel: numpy.ndarray
    k: int


def _pairs(neighborhoods: typing.Sequence[typing.Iterable[int]]) -> typing.Tuple[numpy.ndarray, ...]:
    targets, sources = [], []
    for row, neighbors in enumerate(neighborhoods):
        for other in sorted(neighbors):
            targets.append(row)
            sources.append(other)
    counts = numpy.array([len(n) for n in neighborhoods], dtype=float)
    targets = numpy.asarray(targets, dtype=numpy.intp)
    sources = numpy.asarray(sources, dtype=numpy.intp)
    p = counts + 1.0
    coef = 1.0 / numpy.sqrt(p[targets] * p[sources]) if len(targets) else numpy.zeros(0)
    return targets, sources, coef, counts


def prepare_graph(kg: kgraph.KnowledgeGraph, k: hints.Int) -> GraphTensors:
    """
    Precompute 1-hop and k-hop pairs, their normalization coefficients and the triple arrays of a graph.

    :param kg: Knowledge graph
    :type kg: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param k: Hop distance of the multi-hop encoder
    :type k: :class:`~int`
    :return: Precomputed arrays
    :rtype: :class:`~kgmc.encoder.GraphTensors`
    """
    edge_target, edge_source, edge_coef, degree = _pairs(kg.adjacency)
    hops = [kgraph.hop_rows(kg.adjacency, row, k) for row in range(len(kg))]
    hop_target, hop_source, hop_coef, hop_count = _pairs(hops)
    return GraphTensors(
        n=len(kg), features=kg.features, edge_target=edge_target, edge_source=edge_source, edge_coef=edge_coef,
        degree=degree, hop_target=hop_target, hop_source=hop_source, hop_coef=hop_coef, hop_count=hop_count,
        triple_head=numpy.asarray(kg.rows(t.head for t in kg.triples), dtype=numpy.intp),
        triple_tail=numpy.asarray(kg.rows(t.tail for t in kg.triples), dtype=numpy.intp),
        triple_rel=numpy.asarray([int(t.rel) for t in kg.triples], dtype=numpy.intp),
        k=k)


def _graph(graph, k: hints.Int = 1) -> GraphTensors:
    return prepare_graph(graph, k) if isinstance(graph, kgraph.KnowledgeGraph) else graph


def _glorot(rng: numpy.random.Generator, fan_in: hints.Int, fan_out: hints.Int) -> numpy.ndarray:
    limit = numpy.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EncoderParams(collections.abc.Mapping):
    """
    Named learnable tensors of the encoder, shared by both graphs.

    Layer parameters are named ``layer<l>.<name>`` for layers 1..L; mixer parameters ``mixer.<name>``.
    """

    def __init__(self, tensors: typing.Mapping[str, Tensor]) -> None:
        self._tensors = collections.OrderedDict(tensors)

    def __getitem__(self, name: hints.Str) -> Tensor:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> hints.Int:
        return len(self._tensors)

    @classmethod
    def initialize(cls, input_dim: hints.Int, cfg: config.TrainConfig,
                   rng: numpy.random.Generator) -> 'EncoderParams':
        """
        Glorot-uniform weights, zero biases and a unit gate bias.

        :param input_dim: Raw feature dimension
        :type input_dim: :class:`~int`
        :param cfg: Training configuration
        :type cfg: :class:`~kgmc.config.TrainConfig`
        :param rng: Random generator
        :type rng: :class:`~numpy.random.Generator`
        :return: Freshly initialized parameters
        :rtype: :class:`~kgmc.encoder.EncoderParams`
        """
        hidden, mixed = cfg.hidden_dim, cfg.mixer_hidden
        arrays = collections.OrderedDict()
        for layer in range(1, cfg.layers + 1):
            d_in = input_dim if layer == 1 else hidden
            prefix = 'layer{}.'.format(layer)
            arrays[prefix + 'W_s'] = _glorot(rng, d_in, hidden)
            arrays[prefix + 'W'] = _glorot(rng, d_in, hidden)
            arrays[prefix + 'b'] = numpy.zeros((1, hidden))
            arrays[prefix + 'W_k'] = _glorot(rng, d_in, hidden)
            arrays[prefix + 'b_k'] = numpy.zeros((1, hidden))
            arrays[prefix + 'M_c'] = _glorot(rng, d_in, hidden)
            arrays[prefix + 'M'] = _glorot(rng, d_in, hidden)
            arrays[prefix + 'W_gate1'] = _glorot(rng, hidden, 1)
            arrays[prefix + 'W_gate2'] = _glorot(rng, hidden, 1)
            arrays[prefix + 'b_gate'] = numpy.ones((1, 1))
        arrays['mixer.W_token1'] = _glorot(rng, input_dim, mixed)
        arrays['mixer.W_token2'] = _glorot(rng, mixed, input_dim)
        arrays['mixer.W_channel1'] = _glorot(rng, input_dim, mixed)
        arrays['mixer.W_channel2'] = _glorot(rng, mixed, input_dim)
        arrays['mixer.W_out'] = _glorot(rng, input_dim, hidden)
        arrays['mixer.b_out'] = numpy.zeros((1, hidden))
        return cls.from_arrays(arrays)

    @classmethod
    def from_arrays(cls, arrays: typing.Mapping[str, numpy.ndarray]) -> 'EncoderParams':
        return cls((name, Tensor(numpy.array(value, dtype=float), requires_grad=True))
                   for name, value in arrays.items())

    def arrays(self) -> typing.Dict[str, numpy.ndarray]:
        return collections.OrderedDict((name, t.data.copy()) for name, t in self._tensors.items())

    def layer(self, layer: hints.Int, name: hints.Str) -> Tensor:
        return self._tensors['layer{}.{}'.format(layer, name)]

    @property
    def layers(self) -> hints.Int:
        return sum(1 for name in self._tensors if name.endswith('.W_s'))


def _check(h: Tensor, weight: Tensor, what: hints.Str) -> None:
    if h.shape[1] != weight.shape[0]:
        raise exceptions.DimensionError('{} expects input dimension {}; got {}'.format(
            what, weight.shape[0], h.shape[1]))


def _train_dropout(out: Tensor, train_mode: hints.Bool, rng: typing.Optional[numpy.random.Generator],
                   rate: hints.Float) -> Tensor:
    if not train_mode:
        return out
    if rng is None and rate > 0:
        raise exceptions.ConfigError('Dropout at rate {} in training mode needs a random generator'.format(rate))
    return out.dropout(rate, rng)


def gnn_layer_forward(h, graph, layer: hints.Int, params: EncoderParams, train_mode: hints.Bool = False,
                      rng: typing.Optional[numpy.random.Generator] = None,
                      dropout_rate: hints.Float = 0.0) -> Tensor:
    """
    1-hop aggregation layer.

    Each entity combines its own features through ``W_s`` with the normalized features of its
    neighbors through ``W``, adds the bias once per neighbor and applies ReLU; dropout follows in
    training mode.

    :param h: Entity representations, one row per entity
    :type h: :class:`~kgmc.autograd.Tensor` or :class:`~numpy.ndarray`
    :param graph: Knowledge graph or its precomputed arrays
    :type graph: :class:`~kgmc.kgraph.KnowledgeGraph` or :class:`~kgmc.encoder.GraphTensors`
    :param layer: Layer number, starting at 1
    :type layer: :class:`~int`
    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :param train_mode: Apply dropout
    :type train_mode: :class:`~bool`
    :return: Layer output
    :rtype: :class:`~kgmc.autograd.Tensor`
    :raises :class:`~kgmc.exceptions.DimensionError`: When ``h`` does not match the layer weights
    """
    g = _graph(graph)
    h = autograd.as_tensor(h)
    w_self, w, b = params.layer(layer, 'W_s'), params.layer(layer, 'W'), params.layer(layer, 'b')
    _check(h, w_self, 'Layer {} 1-hop encoder'.format(layer))
    messages = h.take(g.edge_source) * g.edge_coef[:, None]
    aggregated = messages.segment_sum(g.edge_target, g.n) @ w
    out = (h @ w_self + aggregated + g.degree[:, None] * b).relu()
    return _train_dropout(out, train_mode, rng, dropout_rate)


def _softmax_by_segment(scores: Tensor, segments: numpy.ndarray, count: hints.Int) -> Tensor:
    peak = numpy.full(count, -numpy.inf)
    numpy.maximum.at(peak, segments, scores.data[:, 0])
    weights = (scores - peak[segments][:, None]).exp()
    totals = weights.segment_sum(segments, count)
    return weights / totals.take(segments)


def _attention_scores(psi: Tensor, targets: numpy.ndarray, sources: numpy.ndarray,
                      params: EncoderParams, layer: hints.Int) -> Tensor:
    queries = (psi @ params.layer(layer, 'M_c')).take(targets)
    keys = (psi @ params.layer(layer, 'M')).take(sources)
    return (queries * keys).sum(axis=1, keepdims=True).leaky_relu(ATTENTION_SLOPE)


def attention_weights(psi, e: hints.Int, neighbors: typing.Sequence[int], params: EncoderParams,
                      layer: hints.Int = 1) -> numpy.ndarray:
    """
    Attention of one entity over its k-hop neighbors.

    :param psi: Entity representations
    :type psi: :class:`~numpy.ndarray` or :class:`~kgmc.autograd.Tensor`
    :param e: Row of the attending entity
    :type e: :class:`~int`
    :param neighbors: Rows of its k-hop neighbors
    :type neighbors: :class:`~list`
    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :param layer: Layer number, starting at 1
    :type layer: :class:`~int`
    :return: Non-negative weights summing to one; empty when there are no neighbors
    :rtype: :class:`~numpy.ndarray`
    """
    if len(neighbors) == 0:
        return numpy.zeros(0)
    psi = autograd.as_tensor(psi)
    sources = numpy.asarray(neighbors, dtype=numpy.intp)
    scores = _attention_scores(psi, numpy.full(len(sources), e, dtype=numpy.intp), sources, params, layer)
    return _softmax_by_segment(scores, numpy.zeros(len(sources), dtype=numpy.intp), 1).data[:, 0]


def multi_hop_layer_forward(psi, graph, k: hints.Int, layer: hints.Int, params: EncoderParams,
                            train_mode: hints.Bool = False, rng: typing.Optional[numpy.random.Generator] = None,
                            dropout_rate: hints.Float = 0.0) -> Tensor:
    """
    Attentive aggregation over entities exactly ``k`` hops away, with tanh activation.

    :param psi: Entity representations
    :type psi: :class:`~kgmc.autograd.Tensor` or :class:`~numpy.ndarray`
    :param graph: Knowledge graph or its precomputed arrays
    :type graph: :class:`~kgmc.kgraph.KnowledgeGraph` or :class:`~kgmc.encoder.GraphTensors`
    :param k: Hop distance
    :type k: :class:`~int`
    :param layer: Layer number, starting at 1
    :type layer: :class:`~int`
    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :param train_mode: Apply dropout
    :type train_mode: :class:`~bool`
    :return: Layer output
    :rtype: :class:`~kgmc.autograd.Tensor`
    :raises :class:`~kgmc.exceptions.DimensionError`: When ``psi`` does not match the layer weights
    """
    g = _graph(graph, k)
    if g.k != k:
        raise exceptions.ConfigError('Graph arrays were prepared for k={}, not k={}'.format(g.k, k))
    psi = autograd.as_tensor(psi)
    w_k, b_k = params.layer(layer, 'W_k'), params.layer(layer, 'b_k')
    _check(psi, w_k, 'Layer {} multi-hop encoder'.format(layer))
    combined = psi
    if len(g.hop_target):
        scores = _attention_scores(psi, g.hop_target, g.hop_source, params, layer)
        alpha = _softmax_by_segment(scores, g.hop_target, g.n)
        messages = psi.take(g.hop_source) * (alpha * g.hop_coef[:, None])
        combined = psi + messages.segment_sum(g.hop_target, g.n)
    out = (combined @ w_k + g.hop_count[:, None] * b_k).tanh()
    return _train_dropout(out, train_mode, rng, dropout_rate)


def _layer_norm(x: Tensor, axis: hints.Int) -> Tensor:
    centered = x - x.mean(axis=axis, keepdims=True)
    variance = (centered * centered).mean(axis=axis, keepdims=True)
    return centered / (variance + NORM_EPS).sqrt()


def mixer_forward(features, params: EncoderParams) -> Tensor:
    """
    Feature mixer.

    The token mixer is a residual two-layer GeLU MLP over each entity's normalized features. The
    channel mixer normalizes every feature column across entities before a shared residual two-layer
    GeLU MLP. An affine map projects the result to the hidden dimension.

    :param features: Raw feature matrix
    :type features: :class:`~numpy.ndarray` or :class:`~kgmc.autograd.Tensor`
    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :return: Mixed features, one row per entity
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    f = autograd.as_tensor(features)
    _check(f, params['mixer.W_token1'], 'Feature mixer')
    tokens = f + (_layer_norm(f, axis=1) @ params['mixer.W_token1']).gelu() @ params['mixer.W_token2']
    channels = tokens + (_layer_norm(tokens, axis=0) @ params['mixer.W_channel1']).gelu() @ params['mixer.W_channel2']
    return channels @ params['mixer.W_out'] + params['mixer.b_out']


def gate_mix(h, psi, phi, zeta, eta) -> Tensor:
    """
    Blend the three representations given per-entity gate values.

    :return: ``zeta * h + eta * psi + (1 - (zeta + eta) / 2) * phi``
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    h, psi, phi = autograd.as_tensor(h), autograd.as_tensor(psi), autograd.as_tensor(phi)
    zeta, eta = autograd.as_tensor(zeta), autograd.as_tensor(eta)
    return zeta * h + eta * psi + (1.0 - (zeta + eta) * 0.5) * phi


def gate_combine(h, psi, phi, params: EncoderParams, layer: hints.Int = 1) -> Tensor:
    """
    Learnable gate over the 1-hop, multi-hop and mixer representations of a layer.

    ``zeta`` is computed from the multi-hop and mixer rows, ``eta`` from the 1-hop and mixer rows,
    both through ReLU.

    :param h: 1-hop representations
    :param psi: Multi-hop representations
    :param phi: Mixer representations
    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :param layer: Layer number, starting at 1
    :type layer: :class:`~int`
    :return: Gated representations
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    h, psi, phi = autograd.as_tensor(h), autograd.as_tensor(psi), autograd.as_tensor(phi)
    if not h.shape == psi.shape == phi.shape:
        raise exceptions.DimensionError('Gate inputs must share a shape; got {}, {}, {}'.format(
            h.shape, psi.shape, phi.shape))
    w1, w2, b = params.layer(layer, 'W_gate1'), params.layer(layer, 'W_gate2'), params.layer(layer, 'b_gate')
    mixed = phi @ w2
    zeta = (psi @ w1 + mixed + b).relu()
    eta = (h @ w1 + mixed + b).relu()
    return gate_mix(h, psi, phi, zeta, eta)


def final_embedding(blocks: typing.Sequence) -> Tensor:
    """
    Concatenate per-layer blocks after scaling every row of every block to unit length.

    :param blocks: One representation matrix per layer
    :type blocks: :class:`~list`
    :return: Embedding matrix with ``L * d`` columns
    :rtype: :class:`~kgmc.autograd.Tensor`
    :raises :class:`~kgmc.exceptions.DegenerateEmbeddingError`: When a block row has zero norm
    """
    if not blocks:
        raise exceptions.ConfigError('At least one layer block is required')
    normalized = []
    for layer, block in enumerate(blocks, start=1):
        block = autograd.as_tensor(block)
        if block.ndim == 1:
            block = block.reshape(1, -1)
        norm = block.row_norm()
        if numpy.any(norm.data <= ZERO_NORM):
            rows = numpy.flatnonzero(norm.data[:, 0] <= ZERO_NORM)
            raise exceptions.DegenerateEmbeddingError(
                'Layer {} block has zero norm for rows {}'.format(layer, rows[:10].tolist()))
        normalized.append(block / norm)
    return autograd.concat(normalized, axis=1)


def encode(params: EncoderParams, graph: GraphTensors, cfg: config.TrainConfig, train_mode: hints.Bool = False,
           rng: typing.Optional[numpy.random.Generator] = None) -> Tensor:
    """
    Embed every entity of a graph.

    :param params: Encoder parameters
    :type params: :class:`~kgmc.encoder.EncoderParams`
    :param graph: Precomputed graph arrays
    :type graph: :class:`~kgmc.encoder.GraphTensors`
    :param cfg: Training configuration
    :type cfg: :class:`~kgmc.config.TrainConfig`
    :param train_mode: Apply dropout
    :type train_mode: :class:`~bool`
    :param rng: Dropout random generator
    :type rng: :class:`~numpy.random.Generator` or :class:`~NoneType`
    :return: Final embeddings, one row per entity
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    features = Tensor(graph.features)
    hidden = params.layer(1, 'W_s').shape[1]
    blank = Tensor(numpy.zeros((graph.n, hidden)))
    phi = mixer_forward(features, params) if cfg.use_mixer else blank
    h = psi = features
    blocks = []
    for layer in range(1, params.layers + 1):
        h = gnn_layer_forward(h, graph, layer, params, train_mode, rng, cfg.dropout_rate)
        if cfg.use_multi_hop:
            psi = multi_hop_layer_forward(psi, graph, graph.k, layer, params, train_mode, rng, cfg.dropout_rate)
        else:
            psi = blank
        blocks.append(gate_combine(h, psi, phi, params, layer))
    return final_embedding(blocks)


class RelationEncoding:
    """
    Mean head-minus-tail embedding difference of every relation present in a graph.
    """

    def __init__(self, matrix: Tensor, counts: numpy.ndarray) -> None:
        self.matrix = matrix
        self.counts = counts

    @property
    def relations(self) -> typing.List[kgraph.RelationType]:
        return [kgraph.RelationType(code) for code in numpy.flatnonzero(self.counts)]

    def __contains__(self, relation) -> hints.Bool:
        return self.counts[int(relation)] > 0

    def __getitem__(self, relation) -> numpy.ndarray:
        if relation not in self:
            raise KeyError(relation)
        return self.matrix.data[int(relation)].copy()

    def as_dict(self) -> typing.Dict[str, typing.List[float]]:
        return {r.name: [float(v) for v in self[r]] for r in self.relations}


def relation_encoding(graph, embeddings) -> RelationEncoding:
    """
    Relation vectors as the mean of ``h_head - h_tail`` over each relation's triples.

    :param graph: Knowledge graph or its precomputed arrays
    :type graph: :class:`~kgmc.kgraph.KnowledgeGraph` or :class:`~kgmc.encoder.GraphTensors`
    :param embeddings: Embedding matrix
    :type embeddings: :class:`~kgmc.autograd.Tensor` or :class:`~numpy.ndarray`
    :return: Relation vectors; relations without triples are absent
    :rtype: :class:`~kgmc.encoder.RelationEncoding`
    """
    g = _graph(graph)
    emb = autograd.as_tensor(embeddings)
    codes = len(kgraph.RelationType)
    counts = numpy.bincount(g.triple_rel, minlength=codes).astype(float)
    if not len(g.triple_rel):
        return RelationEncoding(Tensor(numpy.zeros((codes, emb.shape[1]))), counts)
    diffs = emb.take(g.triple_head) - emb.take(g.triple_tail)
    scale = 1.0 / numpy.where(counts > 0, counts, 1.0)
    return RelationEncoding(diffs.segment_sum(g.triple_rel, codes) * scale[:, None], counts)


def semantic_loss(graph, embeddings, theta: typing.Optional[RelationEncoding] = None) -> Tensor:
    """
    Sum over relations of the mean distance between each triple's difference and its relation vector.

    :param graph: Knowledge graph or its precomputed arrays
    :type graph: :class:`~kgmc.kgraph.KnowledgeGraph` or :class:`~kgmc.encoder.GraphTensors`
    :param embeddings: Embedding matrix
    :type embeddings: :class:`~kgmc.autograd.Tensor` or :class:`~numpy.ndarray`
    :param theta: Relation vectors; computed from the embeddings when omitted
    :type theta: :class:`~kgmc.encoder.RelationEncoding` or :class:`~NoneType`
    :return: Scalar loss
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    g = _graph(graph)
    emb = autograd.as_tensor(embeddings)
    if not len(g.triple_rel):
        return Tensor(0.0)
    theta = relation_encoding(g, emb) if theta is None else theta
    diffs = emb.take(g.triple_head) - emb.take(g.triple_tail)
    residual = (diffs - theta.matrix.take(g.triple_rel)).row_norm()
    weights = 1.0 / theta.counts[g.triple_rel]
    return (residual * weights[:, None]).sum()


def _pair_rows(pairs) -> typing.Tuple[numpy.ndarray, numpy.ndarray]:
    pairs = numpy.asarray(pairs, dtype=numpy.intp).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def contrastive_loss(source, target, positives, negatives, beta: hints.Float, margin: hints.Float) -> Tensor:
    """
    Distance of aligned pairs plus the weighted hinge of negative pairs closer than the margin.

    :param source: Source embedding matrix
    :param target: Target embedding matrix
    :param positives: Aligned (source row, target row) pairs
    :param negatives: Corrupted (source row, target row) pairs
    :param beta: Weight of the negative term
    :type beta: :class:`~float`
    :param margin: Hinge margin
    :type margin: :class:`~float`
    :return: Scalar loss
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    source, target = autograd.as_tensor(source), autograd.as_tensor(target)
    loss = Tensor(0.0)
    s_rows, t_rows = _pair_rows(positives)
    if len(s_rows):
        loss = loss + (source.take(s_rows) - target.take(t_rows)).row_norm().sum()
    s_rows, t_rows = _pair_rows(negatives)
    if len(s_rows):
        distance = (source.take(s_rows) - target.take(t_rows)).row_norm()
        loss = loss + (margin - distance).relu().sum() * beta
    return loss


def total_loss(contrast: Tensor, semantics: Tensor, alpha: hints.Float) -> Tensor:
    """
    Contrastive loss plus ``alpha`` times the semantic loss of both graphs.
    """
    return autograd.as_tensor(contrast) + autograd.as_tensor(semantics) * alpha


def objective(params: EncoderParams, graph_s: GraphTensors, graph_t: GraphTensors, positives, negatives,
              cfg: config.TrainConfig, train_mode: hints.Bool = False,
              rng: typing.Optional[numpy.random.Generator] = None) -> typing.Tuple[Tensor, Tensor, Tensor]:
    """
    Training objective of one step.

    :return: Total, contrastive and semantic losses
    :rtype: :class:`~tuple`
    """
    emb_s = encode(params, graph_s, cfg, train_mode, rng)
    emb_t = encode(params, graph_t, cfg, train_mode, rng)
    contrast = contrastive_loss(emb_s, emb_t, positives, negatives, cfg.beta, cfg.margin)
    if cfg.use_semantic:
        semantics = semantic_loss(graph_s, emb_s) + semantic_loss(graph_t, emb_t)
    else:
        semantics = Tensor(0.0)
    return total_loss(contrast, semantics, cfg.alpha), contrast, semantics


def _corrupt(original: hints.EntityId, pool: typing.Sequence[str], position: typing.Mapping[str, int],
             rng: numpy.random.Generator) -> hints.EntityId:
    if original in position:
        choice = int(rng.integers(len(pool) - 1))
        return pool[choice + (choice >= position[original])]
    return pool[int(rng.integers(len(pool)))]


def sample_negatives(positives: typing.Sequence[hints.IdPair], source_pool: typing.Sequence[str],
                     target_pool: typing.Sequence[str], n_per_pair: hints.Int,
                     rng: numpy.random.Generator) -> typing.List[hints.IdPair]:
    """
    Corrupt every aligned pair ``n_per_pair`` times by replacing one side, chosen uniformly,
    with a different id from that side's pool.

    :param positives: Aligned (source id, target id) pairs
    :type positives: :class:`~list`
    :param source_pool: Candidate source ids
    :type source_pool: :class:`~list`
    :param target_pool: Candidate target ids
    :type target_pool: :class:`~list`
    :param n_per_pair: Corruptions per aligned pair
    :type n_per_pair: :class:`~int`
    :param rng: Random generator
    :type rng: :class:`~numpy.random.Generator`
    :return: Corrupted pairs
    :rtype: :class:`~list`
    :raises :class:`~kgmc.exceptions.ConfigError`: When a pool has fewer than two ids
    """
    if len(source_pool) < 2 or len(target_pool) < 2:
        raise exceptions.ConfigError('Negative sampling needs pools of at least two ids')
    source_pool, target_pool = list(source_pool), list(target_pool)
    source_position = {i: k for k, i in enumerate(source_pool)}
    target_position = {i: k for k, i in enumerate(target_pool)}
    negatives = []
    for source_id, target_id in positives:
        for _ in range(n_per_pair):
            if rng.integers(2) == 0:
                negatives.append((_corrupt(source_id, source_pool, source_position, rng), target_id))
            else:
                negatives.append((source_id, _corrupt(target_id, target_pool, target_position, rng)))
    return negatives


@dataclasses.dataclass(frozen=True)
class EmbeddingTable:
    """
    Embeddings and relation vectors of one graph.
    """
    ids: typing.Tuple[str, ...]
    matrix: numpy.ndarray
    theta: typing.Dict[str, typing.List[float]] = dataclasses.field(default_factory=dict)

    @property
    def _rows(self) -> typing.Dict[str, int]:
        return {i: k for k, i in enumerate(self.ids)}

    def vector(self, entity_id: hints.EntityId) -> numpy.ndarray:
        """
        :raises :class:`~kgmc.exceptions.UnknownEntityError`: When the id has no embedding
        """
        try:
            return self.matrix[self._rows[entity_id]]
        except KeyError as ex:
            raise exceptions.UnknownEntityError('No embedding for {!r}'.format(entity_id)) from ex

    def as_dict(self) -> typing.Dict:
        return {'ids': list(self.ids), 'matrix': [[float(v) for v in row] for row in self.matrix],
                'theta': self.theta}

    @classmethod
    def from_dict(cls, payload: typing.Mapping) -> 'EmbeddingTable':
        matrix = numpy.asarray(payload['matrix'], dtype=float).reshape(len(payload['ids']), -1)
        return cls(tuple(payload['ids']), matrix, dict(payload.get('theta', {})))


@dataclasses.dataclass(frozen=True)
class EmbeddingSet:
    """
    Embeddings of the source and target graphs in one space.
    """
    source: EmbeddingTable
    target: EmbeddingTable

    def save(self, path: hints.Str) -> None:
        with open(path, 'w') as f:
            json.dump({'source': self.source.as_dict(), 'target': self.target.as_dict()}, f, sort_keys=True)
            f.write('\n')

    @classmethod
    def load(cls, path: hints.Str) -> 'EmbeddingSet':
        try:
            with open(path, 'r') as f:
                payload = json.load(f)
        except (OSError, ValueError) as ex:
            raise exceptions.ConflationError('Unable to read embeddings {}: {}'.format(path, ex)) from ex
        return cls(EmbeddingTable.from_dict(payload['source']), EmbeddingTable.from_dict(payload['target']))


class TrainingRecord(typing.NamedTuple):
    """
    Loss values of one epoch, measured before its update.
    """
    epoch: int
    contrast: float
    semantics: float
    total: float


class Encoder:
    """
    Trained encoder parameters with the configuration and feature layout they were trained on.
    """

    def __init__(self, params: typing.Mapping[str, numpy.ndarray], cfg: config.TrainConfig,
                 feature_names: typing.Sequence[str] = (), vocabulary: typing.Optional[typing.Mapping] = None,
                 history: typing.Sequence[TrainingRecord] = ()) -> None:
        self.params = EncoderParams.from_arrays(params)
        self.config = cfg
        self.feature_names = tuple(feature_names)
        self.vocabulary = dict(vocabulary or {})
        self.history = list(history)
        self.embeddings = None

    def embed(self, kg: kgraph.KnowledgeGraph) -> EmbeddingTable:
        """
        Embed a graph in evaluation mode.

        :param kg: Knowledge graph with the training feature layout
        :type kg: :class:`~kgmc.kgraph.KnowledgeGraph`
        :return: Embeddings and relation vectors
        :rtype: :class:`~kgmc.encoder.EmbeddingTable`
        :raises :class:`~kgmc.exceptions.DimensionError`: When the feature dimension differs
        """
        expected = self.params['mixer.W_token1'].shape[0]
        if kg.dimension != expected:
            raise exceptions.DimensionError('Encoder expects {} features; graph has {}'.format(
                expected, kg.dimension))
        graph = prepare_graph(kg, self.config.k)
        emb = encode(self.params, graph, self.config, train_mode=False)
        theta = relation_encoding(graph, emb)
        return EmbeddingTable(kg.ids, emb.data.copy(), theta.as_dict())

    def embedding_set(self, kg_s: kgraph.KnowledgeGraph, kg_t: kgraph.KnowledgeGraph) -> EmbeddingSet:
        return EmbeddingSet(self.embed(kg_s), self.embed(kg_t))

    def save(self, path: hints.Str) -> None:
        """
        Write a JSON checkpoint with shape-annotated flat parameter arrays.
        """
        payload = {
            'format': CHECKPOINT_FORMAT,
            'config': dataclasses.asdict(self.config),
            'feature_names': list(self.feature_names),
            'vocabulary': self.vocabulary,
            'parameters': {name: {'shape': list(value.shape), 'data': [float(v) for v in value.ravel()]}
                           for name, value in self.params.arrays().items()},
        }
        with open(path, 'w') as f:
            json.dump(payload, f, sort_keys=True)
            f.write('\n')

    @classmethod
    def load(cls, path: hints.Str) -> 'Encoder':
        """
        Restore an encoder from a checkpoint written by :meth:`~kgmc.encoder.Encoder.save`.
        """
        try:
            with open(path, 'r') as f:
                payload = json.load(f)
        except (OSError, ValueError) as ex:
            raise exceptions.ConflationError('Unable to read checkpoint {}: {}'.format(path, ex)) from ex
        if payload.get('format') != CHECKPOINT_FORMAT:
            raise exceptions.ConflationError('{} is not an encoder checkpoint'.format(path))
        arrays = collections.OrderedDict(
            (name, numpy.asarray(p['data'], dtype=float).reshape(p['shape']))
            for name, p in payload['parameters'].items())
        return cls(arrays, config.TrainConfig(**payload['config']), payload.get('feature_names', ()),
                   payload.get('vocabulary'))

    def write_log(self, path: hints.Str) -> None:
        """
        Write the training history as CSV.
        """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(TrainingRecord._fields)
            for record in self.history:
                writer.writerow([record.epoch] + [repr(v) for v in record[1:]])


def _kind_pools(kg: kgraph.KnowledgeGraph) -> typing.Dict[str, typing.List[str]]:
    pools = collections.defaultdict(list)
    for entity_id, kind in zip(kg.ids, kg.kinds):
        pools[kind].append(entity_id)
    return pools


def _negatives_by_kind(positives, kg_s, kg_t, pools_s, pools_t, n_per_pair, rng):
    kinds_s = dict(zip(kg_s.ids, kg_s.kinds))
    by_kind = collections.defaultdict(list)
    for pair in positives:
        by_kind[kinds_s[pair[0]]].append(pair)
    negatives = []
    for kind in sorted(by_kind):
        if len(pools_s.get(kind, ())) < 2 or len(pools_t.get(kind, ())) < 2:
            continue
        negatives.extend(sample_negatives(by_kind[kind], pools_s[kind], pools_t[kind], n_per_pair, rng))
    return negatives


def train(kg_s: kgraph.KnowledgeGraph, kg_t: kgraph.KnowledgeGraph, positives: typing.Sequence[hints.IdPair],
          cfg: config.TrainConfig, vocabulary: typing.Optional[typing.Mapping] = None) -> Encoder:
    """
    Train one shared encoder on both graphs with Adam.

    Negatives are resampled every epoch within the kind (polygon or segment) of each aligned pair.

    :param kg_s: Source knowledge graph
    :type kg_s: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param kg_t: Target knowledge graph
    :type kg_t: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param positives: Aligned (source id, target id) pairs
    :type positives: :class:`~list`
    :param cfg: Training configuration
    :type cfg: :class:`~kgmc.config.TrainConfig`
    :param vocabulary: Feature vocabulary recorded in the checkpoint
    :type vocabulary: :class:`~dict` or :class:`~NoneType`
    :return: Trained encoder with ``embeddings`` for both graphs
    :rtype: :class:`~kgmc.encoder.Encoder`
    :raises :class:`~kgmc.exceptions.TrainingDivergedError`: When the loss stops being finite
    :raises :class:`~kgmc.exceptions.DimensionError`: When the graphs have different feature dimensions
    """
    positives = [(str(s), str(t)) for s, t in positives]
    if not positives:
        raise exceptions.ConfigError('Training needs at least one aligned pair')
    if kg_s.dimension != kg_t.dimension:
        raise exceptions.DimensionError('Source has {} features but target has {}'.format(
            kg_s.dimension, kg_t.dimension))

    init_seed, dropout_seed, negative_seed = numpy.random.SeedSequence(cfg.seed).spawn(3)
    dropout_rng = numpy.random.default_rng(dropout_seed)
    negative_rng = numpy.random.default_rng(negative_seed)
    params = EncoderParams.initialize(kg_s.dimension, cfg, numpy.random.default_rng(init_seed))
    graph_s, graph_t = prepare_graph(kg_s, cfg.k), prepare_graph(kg_t, cfg.k)
    positive_rows = numpy.column_stack([kg_s.rows(s for s, _ in positives), kg_t.rows(t for _, t in positives)])
    pools_s, pools_t = _kind_pools(kg_s), _kind_pools(kg_t)

    optimizer = autograd.Adam(params.values(), lr=cfg.lr)
    history = []
    log.info('Training on %d aligned pairs for %d epochs', len(positives), cfg.epochs)
    with timeouts.Timeout(cfg.time_limit) as timeout:
        for epoch in range(cfg.epochs):
            negatives = _negatives_by_kind(positives, kg_s, kg_t, pools_s, pools_t, cfg.negatives_per_pair,
                                           negative_rng)
            negative_rows = numpy.column_stack([kg_s.rows(s for s, _ in negatives),
                                                kg_t.rows(t for _, t in negatives)]) if negatives else []
            total, contrast, semantics = objective(params, graph_s, graph_t, positive_rows, negative_rows, cfg,
                                                   train_mode=True, rng=dropout_rng)
            record = TrainingRecord(epoch, contrast.item(), semantics.item(), total.item())
            if not numpy.isfinite(record.total):
                raise exceptions.TrainingDivergedError('Loss became {} at epoch {}'.format(record.total, epoch))
            history.append(record)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            if (epoch + 1) % cfg.log_every == 0:
                log.info('Epoch %d: contrast=%.6f semantics=%.6f total=%.6f', epoch, record.contrast,
                         record.semantics, record.total)
            if timeout.exceeded:
                log.warning('Training stopped after %d epochs: time limit of %s exceeded', epoch + 1, timeout)
                break

    arrays = params.arrays()
    if not all(numpy.all(numpy.isfinite(a)) for a in arrays.values()):
        raise exceptions.TrainingDivergedError('Parameters became non-finite during training')
    encoder = Encoder(arrays, cfg, kg_s.feature_names, vocabulary, history)
    encoder.embeddings = encoder.embedding_set(kg_s, kg_t)
    return encoder
