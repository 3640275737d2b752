"""Embed SSGs with a heterogeneous graph network trained as a Siamese pair"""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

from dataset import SingleClass, compute_auc
from evm import StableCategory
from ssg import DATA_KINDS, ControlNode, EdgeRelation, SinkKind, SourceKind, scfg_only
from util import atomic_write_text, named_rng

RELATIONS = (EdgeRelation.CC, EdgeRelation.DD, EdgeRelation.CD)
CATEGORIES = list(StableCategory)
COMPONENTS = ("ssg", "scfg")

# Feature vector layout
NODE_TYPE_OFFSET = 0
CATEGORY_OFFSET = NODE_TYPE_OFFSET + 2
OPCODE_OFFSET = CATEGORY_OFFSET + len(CATEGORIES)
DATA_KIND_OFFSET = OPCODE_OFFSET + 256
PAYLOAD_OFFSET = DATA_KIND_OFFSET + len(DATA_KINDS)
PAYLOAD_BITS = 256
FEATURE_SIZE = PAYLOAD_OFFSET + PAYLOAD_BITS

MODEL_FORMAT = "ssg-embedding-model"
MODEL_VERSION = 1
PARAM_NAMES = ("W_in", "W_cc", "W_dd", "W_cd", "W_out")
_RELATION_PARAMS = {EdgeRelation.CC: "W_cc", EdgeRelation.DD: "W_dd", EdgeRelation.CD: "W_cd"}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
# Gradient check coordinates where both gradients are smaller than this are skipped
GRADCHECK_SKIP = 1e-6
# Smallest gradient magnitude a gradient check error is measured against
GRADCHECK_FLOOR = 1e-4

_ROLE_CODES = {
    SinkKind.STORAGE: {"slot": 1, "stored_value": 2},
    SinkKind.CALL: {"address": 1, "value": 2, "selector": 3, "arg": 4},
}

class EmptyBatch(ApplicationError):
    """Raised when a loss is requested over no pairs"""

class DivergedLoss(ApplicationError):
    """Raised when training produces a non-finite loss"""

class ModelFormatError(ApplicationError):
    """Raised when a model file cannot be loaded"""


#
# Attribute encoding
#

def encode_payload(value):
    """
    Encode an attribute value as 256 bits, big-endian, so bit 255 is the least
    significant bit of an integer. Byte strings are cropped to their first 32
    bytes.

    Args:
        value:  (int or bytes or None) The attribute value

    Returns:
        A numpy array of 256 0/1 values
    """
    if value is None:
        return np.zeros(PAYLOAD_BITS, dtype=np.float64)
    if isinstance(value, (bytes, bytearray)):
        data = bytes(value[:32]).rjust(32, b"\x00")
    else:
        data = (int(value) & ((1 << 256) - 1)).to_bytes(32, "big")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8)).astype(np.float64)

def _sink_payload(node):
    attrs = node.attributes
    if node.kind == SinkKind.LOG:
        topic = attrs.get("topic_index")
        role, index, value = (1, topic, 0) if topic is not None else (2, attrs.get("arg_index") or 0, 0)
    elif node.kind == SinkKind.STORAGE:
        role, index, value = _ROLE_CODES[SinkKind.STORAGE][attrs["role"]], 0, attrs.get("slot") or 0
    elif node.kind == SinkKind.CALL:
        role, index, value = _ROLE_CODES[SinkKind.CALL][attrs["role"]], attrs.get("arg_index") or 0, 0
    else:
        role, index, value = 0, attrs.get("arg_index") or 0, 0
    low = (value & ((1 << 240) - 1)).to_bytes(30, "big")
    return bytes([role & 0xff, index & 0xff]) + low

def encode_attributes(node):
    """
    Build the feature vector of an SSG node

    Args:
        node:   (ControlNode or DataNode) The node

    Returns:
        A numpy array of FEATURE_SIZE values
    """
    feature = np.zeros(FEATURE_SIZE, dtype=np.float64)
    if isinstance(node, ControlNode):
        feature[NODE_TYPE_OFFSET] = 1
        feature[CATEGORY_OFFSET + CATEGORIES.index(node.category)] = 1
        feature[OPCODE_OFFSET + node.opcode] = 1
        return feature

    feature[NODE_TYPE_OFFSET + 1] = 1
    feature[DATA_KIND_OFFSET + DATA_KINDS.index(node.kind)] = 1
    attrs = node.attributes
    if node.kind in (SourceKind.INFORMATION, SourceKind.DEFINITION):
        feature[OPCODE_OFFSET + attrs["opcode"]] = 1
    elif node.kind == SourceKind.CONSTANT:
        feature[PAYLOAD_OFFSET:] = encode_payload(attrs["value"])
    elif node.kind in (SourceKind.CALLDATA, SourceKind.RETURN_DATA):
        feature[PAYLOAD_OFFSET:] = encode_payload(attrs.get("offset"))
    else:
        feature[PAYLOAD_OFFSET:] = encode_payload(_sink_payload(node))
    return feature


#
# Graph preparation
#

def _digest(*parts):
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()

def _node_label(node):
    if isinstance(node, ControlNode):
        return f"c:{node.category.value}:{node.opcode}"
    attrs = ",".join(f"{key}={node.attributes[key]}" for key in sorted(node.attributes))
    return f"d:{node.kind.value}:{attrs}"

def canonical_order(ssg):
    """
    Order the nodes of an SSG by refined structural color so that any
    relabeling of node ids gives the same order up to nodes that are
    structurally indistinguishable.

    Returns:
        A list of node ids
    """
    nodes = ssg.nodes
    colors = {node.id: _digest(_node_label(node)) for node in nodes}
    incoming = {node.id: [] for node in nodes}
    outgoing = {node.id: [] for node in nodes}
    for src, dst, rel in ssg.edges:
        incoming[dst].append((rel.value, src))
        outgoing[src].append((rel.value, dst))
    distinct = len(set(colors.values()))
    for _ in range(len(nodes)):
        refined = {}
        for node_id, color in colors.items():
            ins = sorted(f"{rel}<{colors[src]}" for rel, src in incoming[node_id])
            outs = sorted(f"{rel}>{colors[dst]}" for rel, dst in outgoing[node_id])
            refined[node_id] = _digest(color, *ins, "/", *outs)
        colors = refined
        count = len(set(colors.values()))
        if count == distinct:
            break
        distinct = count
    return sorted(colors, key=lambda node_id: (colors[node_id], node_id))


@dataclass
class GraphTensors:
    """Feature matrix and per-relation adjacency of one SSG in canonical node order"""
    features: object
    adjacency: dict
    node_count: int

def prepare_graph(ssg, component="ssg"):
    """
    Convert an SSG into the matrices the network runs on. adjacency[r][v, u]
    counts the edges u -> v of relation r.

    Args:
        ssg:        (Ssg) The graph
        component:  (str) "ssg" for the whole graph, "scfg" for control flow only

    Returns:
        A GraphTensors
    """
    if component not in COMPONENTS:
        raise InvalidArgumentError(f"Unknown component '{component}'")
    if component == "scfg":
        ssg = scfg_only(ssg)
    order = canonical_order(ssg)
    position = {node_id: idx for idx, node_id in enumerate(order)}
    count = len(order)
    if count:
        features = sparse.csr_matrix(np.vstack([encode_attributes(ssg.node(node_id)) for node_id in order]))
    else:
        features = sparse.csr_matrix((0, FEATURE_SIZE), dtype=np.float64)
    adjacency = {}
    for rel in RELATIONS:
        pairs = [(position[dst], position[src]) for src, dst, edge_rel in ssg.edges if edge_rel == rel]
        rows = np.array([p[0] for p in pairs], dtype=np.int64)
        cols = np.array([p[1] for p in pairs], dtype=np.int64)
        matrix = sparse.coo_matrix((np.ones(len(pairs)), (rows, cols)), shape=(count, count)).tocsr()
        matrix.sum_duplicates()
        matrix.sort_indices()
        adjacency[rel] = matrix
    return GraphTensors(features, adjacency, count)


#
# Model
#

class EmbeddingModel:
    """Parameters of the graph embedding network"""

    def __init__(self, params, embed_size=64, depth=1, seed=0, component="ssg"):
        self.params = params
        self.embed_size = embed_size
        self.depth = depth
        self.seed = seed
        self.component = component
        self.validate()

    @classmethod
    def initialize(cls, embed_size=64, depth=1, seed=0, component="ssg"):
        """
        Create a model with weights drawn uniformly from +-1/sqrt(p)

        Args:
            embed_size: (int) Embedding size p
            depth:      (int) Message passing rounds n
            seed:       (int) Seed for the "init" random stream
            component:  (str) "ssg" or "scfg"
        """
        if embed_size < 1:
            raise InvalidArgumentError("embed_size must be positive")
        if depth < 0:
            raise InvalidArgumentError("depth must not be negative")
        rng = named_rng(seed, "init")
        bound = 1.0 / np.sqrt(embed_size)
        params = {}
        for name in PARAM_NAMES:
            params[name] = rng.uniform(-bound, bound, size=cls.param_shape(name, embed_size))
        return cls(params, embed_size, depth, seed, component)

    @staticmethod
    def param_shape(name, embed_size):
        return (embed_size, FEATURE_SIZE) if name == "W_in" else (embed_size, embed_size)

    def validate(self):
        if self.component not in COMPONENTS:
            raise ModelFormatError(f"Unknown model component '{self.component}'")
        for name in PARAM_NAMES:
            if name not in self.params:
                raise ModelFormatError(f"Model is missing parameter {name}")
            expected = self.param_shape(name, self.embed_size)
            if self.params[name].shape != expected:
                raise ModelFormatError(f"Parameter {name} has shape {self.params[name].shape}, expected {expected}")
            if not np.all(np.isfinite(self.params[name])):
                raise ModelFormatError(f"Parameter {name} has non-finite values")

    def copy(self):
        return EmbeddingModel({name: value.copy() for name, value in self.params.items()},
                              self.embed_size, self.depth, self.seed, self.component)

    def prepare(self, ssg):
        return prepare_graph(ssg, self.component)

    def to_json(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "embed_size": self.embed_size,
            "depth": self.depth,
            "seed": self.seed,
            "component": self.component,
            "feature_size": FEATURE_SIZE,
            "params": {name: {"shape": list(self.params[name].shape),
                              "data": [float(x) for x in self.params[name].ravel()]}
                       for name in PARAM_NAMES},
        }

    @classmethod
    def from_json(cls, doc):
        try:
            if doc.get("format") != MODEL_FORMAT:
                raise ModelFormatError("Not an embedding model file")
            if doc.get("version") != MODEL_VERSION:
                raise ModelFormatError(f"Unsupported model version {doc.get('version')}")
            if doc.get("feature_size") != FEATURE_SIZE:
                raise ModelFormatError(f"Model feature size {doc.get('feature_size')} does not match {FEATURE_SIZE}")
            params = {}
            for name in PARAM_NAMES:
                item = doc["params"][name]
                params[name] = np.array(item["data"], dtype=np.float64).reshape(item["shape"])
            return cls(params, int(doc["embed_size"]), int(doc["depth"]), int(doc["seed"]), doc.get("component", "ssg"))
        except (KeyError, TypeError, ValueError) as ex:
            raise ModelFormatError(f"Malformed model file: {ex}") from ex

def save_model(model, path):
    """Write a model file atomically"""
    atomic_write_text(path, json.dumps(model.to_json(), sort_keys=True) + "\n")

def load_model(path):
    """Load a model file"""
    try:
        with open(path, "r", encoding="utf-8") as infile:
            doc = json.load(infile)
    except (OSError, json.JSONDecodeError) as ex:
        raise ModelFormatError(f"Could not read model {path}: {ex}") from ex
    return EmbeddingModel.from_json(doc)


#
# Forward and backward passes
#

def _forward(params, graph, depth):
    """Run the network, returning the embedding and what the backward pass needs"""
    embed_size = params["W_out"].shape[0]
    if graph.node_count == 0:
        return np.zeros(embed_size), None
    features = graph.features
    hidden = np.tanh(np.asarray(features @ params["W_in"].T))
    layers = [hidden]
    messages = []
    for _ in range(depth):
        round_messages = {rel: np.asarray(graph.adjacency[rel] @ hidden) for rel in RELATIONS}
        pre = hidden.copy()
        for rel in RELATIONS:
            pre += round_messages[rel] @ params[_RELATION_PARAMS[rel]].T
        hidden = np.tanh(pre)
        messages.append(round_messages)
        layers.append(hidden)
    pooled = hidden.sum(axis=0)
    raw = params["W_out"] @ pooled
    norm = np.linalg.norm(raw)
    if norm == 0 or not np.isfinite(norm):
        return np.zeros(embed_size), None
    mu = raw / norm
    return mu, (graph, layers, messages, pooled, norm, mu)

def _backward(params, cache, grad_mu, grads):
    """Accumulate parameter gradients for an upstream gradient on the embedding"""
    if cache is None:
        return
    graph, layers, messages, pooled, norm, mu = cache
    grad_raw = (grad_mu - mu * np.dot(mu, grad_mu)) / norm
    grads["W_out"] += np.outer(grad_raw, pooled)
    grad_hidden = np.tile(params["W_out"].T @ grad_raw, (graph.node_count, 1))
    for step in range(len(messages) - 1, -1, -1):
        grad_pre = grad_hidden * (1.0 - layers[step + 1] ** 2)
        grad_hidden = grad_pre.copy()
        for rel in RELATIONS:
            weight = params[_RELATION_PARAMS[rel]]
            grads[_RELATION_PARAMS[rel]] += grad_pre.T @ messages[step][rel]
            grad_hidden += np.asarray(graph.adjacency[rel].T @ (grad_pre @ weight))
    grad_pre0 = grad_hidden * (1.0 - layers[0] ** 2)
    grads["W_in"] += np.asarray((graph.features.T @ grad_pre0).T)

def embed_prepared(model, graph):
    return _forward(model.params, graph, model.depth)[0]

def embed_ssg(ssg, model):
    """
    Compute the unit-length embedding of an SSG. Graphs with no nodes embed to
    the zero vector.

    Args:
        ssg:    (Ssg) The graph
        model:  (EmbeddingModel) The network

    Returns:
        A numpy array of size model.embed_size
    """
    vector = embed_prepared(model, model.prepare(ssg))
    if not np.any(vector):
        GetLogger().debug(f"Function {ssg.function_selector} of {ssg.origin_id} embeds to the zero vector")
    return vector

def similarity(mu1, mu2):
    """
    Cosine similarity of two embeddings, 0 when either is the zero vector

    Returns:
        A float in [-1, 1]
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise InvalidArgumentError(f"Cannot compare vectors of size {mu1.size} and {mu2.size}")
    norm = np.linalg.norm(mu1) * np.linalg.norm(mu2)
    if norm == 0:
        return 0.0
    return float(np.clip(np.dot(mu1, mu2) / norm, -1.0, 1.0))


#
# Loss
#

def siamese_loss(similarities, labels):
    """
    Pair loss: minus the mean similarity of similar pairs plus the mean
    dissimilarity (1 - similarity) of dissimilar pairs. A mean over a label
    with no pairs is dropped.

    Args:
        similarities:   (list of float) Similarity of each pair
        labels:         (list of int) +1 for similar pairs, -1 for dissimilar

    Returns:
        The loss as a float
    """
    sims = np.asarray(similarities, dtype=np.float64)
    labels = np.asarray(labels)
    if sims.size == 0:
        raise EmptyBatch("Cannot compute a loss over an empty batch")
    loss = 0.0
    if np.any(labels > 0):
        loss -= sims[labels > 0].mean()
    if np.any(labels < 0):
        loss -= (1.0 - sims[labels < 0]).mean()
    return float(loss)

def batch_loss(model, batch, graphs, with_grads=True):
    """
    Loss of a batch of pairs and its gradient with respect to every parameter.
    Both members of a pair go through the same parameters.

    Args:
        model:      (EmbeddingModel) The network
        batch:      (list of (a, b, y)) Pairs of graph keys and labels
        graphs:     (dict) Graph key to GraphTensors
        with_grads: (bool) Compute gradients too

    Returns:
        (loss, dict of parameter name to gradient array, or None)
    """
    if not batch:
        raise EmptyBatch("Cannot compute a loss over an empty batch")
    params = model.params
    positives = sum(1 for _, _, y in batch if y > 0)
    negatives = len(batch) - positives
    grads = {name: np.zeros_like(value) for name, value in params.items()} if with_grads else None
    embedded = {}
    loss = 0.0
    for key_a, key_b, y in batch:
        for key in (key_a, key_b):
            if key not in embedded:
                embedded[key] = _forward(params, graphs[key], model.depth)
        mu_a, cache_a = embedded[key_a]
        mu_b, cache_b = embedded[key_b]
        sim = float(np.dot(mu_a, mu_b))
        if y > 0:
            loss -= sim / positives
            grad_sim = -1.0 / positives
        else:
            loss -= (1.0 - sim) / negatives
            grad_sim = 1.0 / negatives
        if with_grads:
            _backward(params, cache_a, grad_sim * mu_b, grads)
            _backward(params, cache_b, grad_sim * mu_a, grads)
    return loss, grads


#
# Training
#

@dataclass
class TrainingConfig:
    """Optimizer settings"""
    learning_rate: float = 0.001
    batch_pairs: int = 100
    epochs: int = 50
    embed_size: int = 64
    depth: int = 1
    seed: int = 0
    component: str = "ssg"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must not be negative")
        if self.batch_pairs < 1:
            raise InvalidArgumentError("batch_pairs must be at least 1")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must not be negative")


class AdamOptimizer:
    """Adam with the standard moment defaults"""

    def __init__(self, params, learning_rate):
        self.learning_rate = learning_rate
        self.step_count = 0
        self.first = {name: np.zeros_like(value) for name, value in params.items()}
        self.second = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, params, grads):
        if self.learning_rate == 0:
            return
        self.step_count += 1
        correction1 = 1.0 - ADAM_BETA1 ** self.step_count
        correction2 = 1.0 - ADAM_BETA2 ** self.step_count
        for name in PARAM_NAMES:
            self.first[name] = ADAM_BETA1 * self.first[name] + (1.0 - ADAM_BETA1) * grads[name]
            self.second[name] = ADAM_BETA2 * self.second[name] + (1.0 - ADAM_BETA2) * grads[name] ** 2
            m_hat = self.first[name] / correction1
            v_hat = self.second[name] / correction2
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


@dataclass
class TrainingResult:
    """The best model found and one log row per epoch"""
    model: EmbeddingModel
    log: list = field(default_factory=list)
    best_epoch: int = 0

def prepare_pairs(model, pairs, graphs):
    """
    Prepare the graph of every pair member once

    Args:
        model:  (EmbeddingModel) Decides which component of each SSG is kept
        pairs:  (list of (a, b, y)) Pairs of graph keys
        graphs: (dict) Graph key to Ssg

    Returns:
        A dict of graph key to GraphTensors
    """
    keys = sorted({key for pair in pairs for key in pair[:2]})
    missing = [key for key in keys if key not in graphs]
    if missing:
        raise InvalidArgumentError(f"{len(missing)} pair members have no graph, first is {missing[0]}")
    return {key: model.prepare(graphs[key]) for key in keys}

def score_pairs(model, pairs, graphs):
    """Similarity of every pair, given prepared graphs"""
    cache = {}
    scores = []
    for key_a, key_b, _ in pairs:
        for key in (key_a, key_b):
            if key not in cache:
                cache[key] = embed_prepared(model, graphs[key])
        scores.append(similarity(cache[key_a], cache[key_b]))
    return scores

def evaluate_pairs(model, pairs, graphs):
    """
    Loss and AUC of a model over labeled pairs. AUC is None when the pairs
    hold a single label, both are None for no pairs.

    Args:
        model:  (EmbeddingModel) The network
        pairs:  (list of (a, b, y)) Pairs of graph keys
        graphs: (dict) Graph key to Ssg

    Returns:
        (loss, auc)
    """
    return _evaluate(model, pairs, prepare_pairs(model, pairs, graphs))

def _evaluate(model, pairs, graphs):
    if not pairs:
        return None, None
    scores = score_pairs(model, pairs, graphs)
    labels = [y for _, _, y in pairs]
    loss = siamese_loss(scores, labels)
    try:
        auc = compute_auc(scores, labels)
    except SingleClass:
        auc = None
    return loss, auc

def train(train_pairs, graphs, config, val_pairs=None):
    """
    Train an embedding model with Adam on shuffled mini-batches of pairs

    Args:
        train_pairs:    (list of (a, b, y)) Training pairs of graph keys
        graphs:         (dict) Graph key to Ssg
        config:         (TrainingConfig) Optimizer and model settings
        val_pairs:      (list of (a, b, y)) Validation pairs used to pick the
                        best epoch, training loss is used if not given

    Returns:
        A TrainingResult holding the lowest validation loss model
    """
    log = GetLogger()
    if not train_pairs:
        raise EmptyBatch("No training pairs")
    model = EmbeddingModel.initialize(config.embed_size, config.depth, config.seed, config.component)
    tensors = prepare_pairs(model, list(train_pairs) + list(val_pairs or []), graphs)

    shuffle_rng = named_rng(config.seed, "shuffle")
    optimizer = AdamOptimizer(model.params, config.learning_rate)
    result = TrainingResult(model.copy())
    best_loss = None
    if val_pairs:
        best_loss, _ = _evaluate(model, val_pairs, tensors)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), config.batch_pairs):
            batch = [train_pairs[idx] for idx in order[start:start + config.batch_pairs]]
            loss, grads = batch_loss(model, batch, tensors)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergedLoss(f"Loss diverged in epoch {epoch} at batch {start // config.batch_pairs}: {loss}")
            optimizer.step(model.params, grads)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss, val_auc = _evaluate(model, val_pairs, tensors) if val_pairs else (None, None)
        result.log.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_auc": val_auc})
        auc_text = f"{val_auc:.4f}" if val_auc is not None else "n/a"
        val_text = f"{val_loss:.6f}" if val_loss is not None else "n/a"
        log.info(f"Epoch {epoch}/{config.epochs}: train loss {train_loss:.6f}, val loss {val_text}, val AUC {auc_text}")
        selection_loss = val_loss if val_loss is not None else train_loss
        if best_loss is None or selection_loss < best_loss:
            best_loss = selection_loss
            result.model = model.copy()
            result.best_epoch = epoch
    return result


#
# Gradient check
#

@dataclass
class GradientCheckResult:
    """Largest relative error over the checked coordinates"""
    max_error: float
    checked: int
    skipped: int

def gradient_check(model, batch, graphs, h=1e-5, coordinates=200, seed=0, grad_scale=1.0):
    """
    Compare analytic gradients of the batch loss with central finite
    differences on a random sample of parameter coordinates.

    Args:
        model:          (EmbeddingModel) The network, left unchanged
        batch:          (list of (a, b, y)) Pairs of graph keys
        graphs:         (dict) Graph key to Ssg
        h:              (float) Finite difference step
        coordinates:    (int) Number of coordinates to sample
        seed:           (int) Seed for the "gradcheck" random stream
        grad_scale:     (float) Multiplier applied to the analytic gradient,
                        anything but 1 injects a fault

    Returns:
        A GradientCheckResult
    """
    model = model.copy()
    tensors = {key: model.prepare(graphs[key]) for pair in batch for key in pair[:2]}
    _, grads = batch_loss(model, batch, tensors)

    # Columns of W_in for feature bits no node sets always have zero gradient
    active = np.unique(np.concatenate([tensors[key].features.indices for key in tensors] + [np.array([], dtype=np.int32)]))
    candidates = []
    for name in PARAM_NAMES:
        rows, cols = model.params[name].shape
        col_range = active if name == "W_in" else np.arange(cols)
        candidates.extend((name, row, int(col)) for row in range(rows) for col in col_range)
    rng = named_rng(seed, "gradcheck")
    picks = rng.choice(len(candidates), size=min(coordinates, len(candidates)), replace=False)

    max_error = 0.0
    checked = skipped = 0
    for pick in sorted(picks):
        name, row, col = candidates[pick]
        param = model.params[name]
        original = param[row, col]
        param[row, col] = original + h
        loss_plus, _ = batch_loss(model, batch, tensors, with_grads=False)
        param[row, col] = original - h
        loss_minus, _ = batch_loss(model, batch, tensors, with_grads=False)
        param[row, col] = original
        numeric = (loss_plus - loss_minus) / (2 * h)
        analytic = grads[name][row, col] * grad_scale
        if max(abs(analytic), abs(numeric)) < GRADCHECK_SKIP:
            skipped += 1
            continue
        checked += 1
        max_error = max(max_error, abs(analytic - numeric) / max(abs(numeric), GRADCHECK_FLOOR))
    GetLogger().debug(f"Gradient check: max relative error {max_error:.3e} over {checked} coordinates, {skipped} skipped")
    return GradientCheckResult(max_error, checked, skipped)
