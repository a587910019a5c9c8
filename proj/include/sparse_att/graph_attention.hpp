// Multi-relational sparse-attention message passing.
//
// A batch holds S scenes of n agents each, stacked into R = S*n rows. Edges
// never cross scenes. For every relation (a single "all" relation for
// homogeneous tasks; "teammate" and "enemy" for two-team tasks) each agent
// attends over its neighborhood with that relation's heads:
//
//   logits_ij = <q_i, k_j> / sqrt(d_K)        j in N_r(i)
//   w_i.      = sigma(logits_i.)              softmax | sparsemax | adaptive
//   att_i     = sum_j w_ij v_j
//
// and re-embeds with h_i <- f_mp(h_i || att_i^(r1,head1) || ...). Self
// information enters through the concatenation; agents never attend to
// themselves. An empty neighborhood yields a zero aggregate.

#pragma once

#include "sparse_att/nn.hpp"
#include "sparse_att/sparse_activations.hpp"
#include "sparse_att/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_att {

enum class Activation { softmax, sparsemax, adaptive };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::softmax: return "softmax";
    case Activation::sparsemax: return "sparsemax";
    case Activation::adaptive: return "adaptive";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "softmax") return Activation::softmax;
  if (s == "sparsemax") return Activation::sparsemax;
  if (s == "adaptive") return Activation::adaptive;
  throw std::invalid_argument("unknown activation '" + s + "' (expected softmax|sparsemax|adaptive)");
}

enum class Relation { all, teammate, enemy };

inline std::string to_string(Relation r) {
  switch (r) {
    case Relation::all: return "all";
    case Relation::teammate: return "teammate";
    case Relation::enemy: return "enemy";
  }
  return "?";
}

struct ModelConfig {
  Activation activation = Activation::adaptive;
  bool heterogeneous = false;  // two relations (teammate/enemy) instead of one
  std::size_t heads = 1;       // per relation, 1..4
  std::size_t hops = 2;
  std::size_t embed_dim = 128;
  std::size_t key_dim = 128;
  std::size_t head_hidden = 128;
  std::size_t agent_dim = 4;
  std::size_t entity_dim = 2;
  std::size_t actions = 5;
  GateWidths gate;

  std::vector<Relation> relations() const {
    return heterogeneous ? std::vector<Relation>{Relation::teammate, Relation::enemy}
                         : std::vector<Relation>{Relation::all};
  }

  void validate() const {
    if (heads < 1 || heads > 4) throw std::invalid_argument("heads per relation must be in [1, 4]");
    if (hops < 1) throw std::invalid_argument("at least one message-passing hop is required");
    if (embed_dim == 0 || key_dim == 0 || head_hidden == 0) throw std::invalid_argument("widths must be positive");
  }
};

/// S scenes x n agents of observations, with per-agent team ids and an
/// optional potential-edge mask (row-major n x n per scene; empty means every
/// ordered pair i != j may communicate).
struct SceneBatch {
  std::size_t scenes = 0;
  std::size_t agents = 0;
  std::size_t entities = 0;
  std::vector<double> agent_states;   // rows x agent_dim
  std::vector<double> entity_states;  // rows * entities x entity_dim
  std::vector<int> team;              // rows
  std::vector<std::uint8_t> edge_mask;

  std::size_t rows() const { return scenes * agents; }

  bool potential_edge(std::size_t scene, std::size_t i, std::size_t j) const {
    if (i == j) return false;
    if (edge_mask.empty()) return true;
    return edge_mask[(scene * agents + i) * agents + j] != 0;
  }
};

/// Directed edges receiver <- sender over global rows, grouped by receiver so
/// that segment r holds the neighborhood of row r.
struct EdgeList {
  std::vector<std::size_t> receiver;
  std::vector<std::size_t> sender;
  Segments segments;

  std::size_t size() const { return receiver.size(); }
};

inline EdgeList build_edges(const SceneBatch& b, Relation rel) {
  EdgeList e;
  e.segments.offsets.assign(1, 0);
  const std::size_t n = b.agents;
  for (std::size_t s = 0; s < b.scenes; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = s * n + i;
      for (std::size_t j = 0; j < n; ++j) {
        if (!b.potential_edge(s, i, j)) continue;
        const bool same = b.team[row] == b.team[s * n + j];
        if ((rel == Relation::teammate && !same) || (rel == Relation::enemy && same)) continue;
        e.receiver.push_back(row);
        e.sender.push_back(s * n + j);
      }
      e.segments.offsets.push_back(e.receiver.size());
    }
  }
  return e;
}

/// Edge-wise scaled dot products <q_receiver, k_sender> * scale as an E x 1 column.
inline Tensor edge_logits(const Tensor& q, const Tensor& k, std::shared_ptr<const EdgeList> edges, double scale) {
  if (!(q.shape() == k.shape())) throw DimensionError("edge_logits: query/key shapes differ");
  const std::size_t d = q.cols();
  std::vector<double> out(edges->size());
  for (std::size_t e = 0; e < edges->size(); ++e) {
    const double* qi = q.values().data() + edges->receiver[e] * d;
    const double* kj = k.values().data() + edges->sender[e] * d;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
    out[e] = s * scale;
  }
  return make_op({edges->size(), 1}, std::move(out), {q, k}, [edges, scale, d](Node& self) {
    Node& pq = self.parent(0);
    Node& pk = self.parent(1);
    double* gq = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
    double* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
    for (std::size_t e = 0; e < edges->size(); ++e) {
      const double g = self.grad[e] * scale;
      const std::size_t i = edges->receiver[e] * d, j = edges->sender[e] * d;
      for (std::size_t c = 0; c < d; ++c) {
        if (gq) gq[i + c] += g * pk.value[j + c];
        if (gk) gk[j + c] += g * pq.value[i + c];
      }
    }
  });
}

/// out[receiver] += w_e * v[sender]; rows with no edges stay zero.
inline Tensor edge_aggregate(const Tensor& w, const Tensor& v, std::shared_ptr<const EdgeList> edges, std::size_t rows) {
  if (w.rows() != edges->size() || w.cols() != 1) throw DimensionError("edge_aggregate: weights must be E x 1");
  const std::size_t d = v.cols();
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t e = 0; e < edges->size(); ++e) {
    const double we = w.values()[e];
    const double* vj = v.values().data() + edges->sender[e] * d;
    double* oi = out.data() + edges->receiver[e] * d;
    for (std::size_t c = 0; c < d; ++c) oi[c] += we * vj[c];
  }
  return make_op({rows, d}, std::move(out), {w, v}, [edges, d](Node& self) {
    Node& pw = self.parent(0);
    Node& pv = self.parent(1);
    double* gw = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
    double* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
    for (std::size_t e = 0; e < edges->size(); ++e) {
      const double* gi = self.grad.data() + edges->receiver[e] * d;
      const std::size_t j = edges->sender[e] * d;
      if (gw) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += gi[c] * pv.value[j + c];
        gw[e] += s;
      }
      if (gv) {
        const double we = pw.value[e];
        for (std::size_t c = 0; c < d; ++c) gv[j + c] += we * gi[c];
      }
    }
  });
}

struct AttentionHead {
  Tensor w_key, w_query, w_value;  // embed_dim x key_dim
  MonotoneGate gate;
  SparsityScale scale;

  AttentionHead() = default;
  AttentionHead(std::size_t embed_dim, std::size_t key_dim, GateWidths widths, Rng& rng)
      : w_key(random_normal(embed_dim, key_dim, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng)),
        w_query(random_normal(embed_dim, key_dim, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng)),
        w_value(random_normal(embed_dim, key_dim, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng)),
        gate(widths, rng) {}

  std::size_t key_dim() const { return w_key.cols(); }

  /// Normalized attention weights (E x 1) for precomputed logits.
  Tensor normalize(const Tensor& logits, const Segments& seg, Activation mode) const {
    switch (mode) {
      case Activation::softmax: return segment_softmax(logits, seg);
      case Activation::sparsemax: return segment_sparsemax(logits, seg);
      case Activation::adaptive: return segment_adaptive_sparse(logits, seg, gate, scale);
    }
    throw std::logic_error("unknown activation");
  }

  struct Output {
    Tensor aggregate;  // rows x key_dim
    Tensor weights;    // E x 1, aligned with the edge list
  };

  Output forward(const Tensor& h, std::shared_ptr<const EdgeList> edges, Activation mode) const {
    const Tensor q = matmul(h, w_query);
    const Tensor k = matmul(h, w_key);
    const Tensor v = matmul(h, w_value);
    const Tensor logits = edge_logits(q, k, edges, 1.0 / std::sqrt(static_cast<double>(key_dim())));
    Tensor w = normalize(logits, edges->segments, mode);
    return {edge_aggregate(w, v, edges, h.rows()), w};
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".w_key", w_key});
    out.push_back({prefix + ".w_query", w_query});
    out.push_back({prefix + ".w_value", w_value});
    gate.collect(prefix + ".gate", out);
    scale.collect(prefix + ".scale", out);
  }
};

/// Single-agent view of one head: agent i attends over `neighborhood` (row
/// indices into h). Returns the 1 x key_dim aggregate and the weights in
/// neighborhood order; an empty neighborhood gives zeros and no weights.
inline std::pair<Tensor, std::vector<double>> attention_head_forward(const AttentionHead& head, Activation mode,
                                                                     const Tensor& h,
                                                                     const std::vector<std::size_t>& neighborhood,
                                                                     std::size_t i) {
  auto edges = std::make_shared<EdgeList>();
  for (std::size_t j : neighborhood) {
    edges->receiver.push_back(0);
    edges->sender.push_back(j + 1);
  }
  edges->segments.offsets = {0, neighborhood.size()};
  // Row 0 holds agent i; rows 1.. are the candidates.
  std::vector<std::size_t> rows{i};
  for (std::size_t r = 0; r < h.rows(); ++r) rows.push_back(r);
  const Tensor local = gather_rows(h, rows);
  const auto out = head.forward(local, edges, mode);
  return {gather_rows(out.aggregate, {0}), {out.weights.values().begin(), out.weights.values().end()}};
}

// ---------------------------------------------------------------------------

struct AttentionRecord {
  std::size_t hop = 0;
  std::size_t head = 0;
  Relation relation = Relation::all;
  std::shared_ptr<const EdgeList> edges;
  Tensor weights;  // E x 1
};

struct AdjacencyMatrix {
  std::size_t hop = 0;
  std::size_t head = 0;
  Relation relation = Relation::all;
  std::vector<double> matrix;  // n x n row-major, receiver rows
};

/// Communication graph of one scene: potential edges, their relation labels,
/// and the attention weights the network assigned at every hop and head.
struct AgentGraph {
  std::size_t n = 0;
  std::vector<std::uint8_t> potential;  // n x n
  std::vector<Relation> relation;       // n x n, meaningful where potential
  std::vector<AdjacencyMatrix> learned_weights;
};

struct ForwardResult {
  Tensor logits;  // rows x actions
  Tensor values;  // rows x 1
  std::vector<AttentionRecord> attention;
};

inline std::vector<double> adjacency_for_scene(const AttentionRecord& rec, std::size_t scene, std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  const std::size_t lo = scene * n, hi = lo + n;
  const auto& e = *rec.edges;
  for (std::size_t s = lo; s < hi; ++s) {
    for (std::size_t k = e.segments.begin(s); k < e.segments.end(s); ++k) {
      m[(e.receiver[k] - lo) * n + (e.sender[k] - lo)] = rec.weights.values()[k];
    }
  }
  return m;
}

inline AgentGraph agent_graph(const SceneBatch& b, const ForwardResult& fr, std::size_t scene) {
  AgentGraph g;
  g.n = b.agents;
  g.potential.assign(g.n * g.n, 0);
  g.relation.assign(g.n * g.n, Relation::all);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      g.potential[i * g.n + j] = b.potential_edge(scene, i, j);
      const bool same = b.team[scene * g.n + i] == b.team[scene * g.n + j];
      g.relation[i * g.n + j] = same ? Relation::teammate : Relation::enemy;
    }
  }
  for (const auto& rec : fr.attention) {
    g.learned_weights.push_back({rec.hop, rec.head, rec.relation, adjacency_for_scene(rec, scene, g.n)});
  }
  return g;
}

/// Support sizes of every non-empty attention row in a record.
inline std::vector<std::size_t> support_sizes(const AttentionRecord& rec) {
  std::vector<std::size_t> out;
  const auto& seg = rec.edges->segments;
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.length(s) == 0) continue;
    std::size_t k = 0;
    for (std::size_t e = seg.begin(s); e < seg.end(s); ++e) k += rec.weights.values()[e] > 0.0;
    out.push_back(k);
  }
  return out;
}

struct HopLayer {
  std::vector<AttentionHead> heads;  // relation-major: relations x heads
  Linear update;
};

class PolicyValueNet {
 public:
  PolicyValueNet() = default;
  PolicyValueNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = cfg_.embed_dim;
    agent_encoder = Mlp(cfg_.agent_dim, d, d, rng, true);
    entity_encoder = Mlp(cfg_.entity_dim, d, d, rng, true);
    initial = Linear(2 * d, d, rng);
    const std::size_t n_rel = cfg_.relations().size();
    for (std::size_t l = 0; l < cfg_.hops; ++l) {
      HopLayer hop;
      for (std::size_t k = 0; k < n_rel * cfg_.heads; ++k) hop.heads.emplace_back(d, cfg_.key_dim, cfg_.gate, rng);
      hop.update = Linear(d + n_rel * cfg_.heads * cfg_.key_dim, d, rng);
      hops.push_back(std::move(hop));
    }
    policy = Mlp(d, cfg_.head_hidden, cfg_.actions, rng, false);
    value = Mlp(d, cfg_.head_hidden, 1, rng, false);
    for (double& w : policy.output.weight.mutable_values()) w *= 0.01;
  }

  const ModelConfig& config() const { return cfg_; }

  /// Deep copy; the default copy shares parameter storage.
  PolicyValueNet clone() const {
    PolicyValueNet copy(cfg_, 0);
    auto src = parameters();
    auto dst = copy.parameters();
    for (std::size_t k = 0; k < src.size(); ++k) {
      std::copy(src[k].tensor.values().begin(), src[k].tensor.values().end(), dst[k].tensor.mutable_values().begin());
    }
    return copy;
  }

  /// U = f_a(X), one row per agent.
  Tensor encode_agents(const Tensor& agent_states) const {
    if (agent_states.cols() != cfg_.agent_dim) {
      throw DimensionError("encode_agent: expected " + std::to_string(cfg_.agent_dim) + "-dim agent states, got " +
                           agent_states.shape().str());
    }
    return agent_encoder(agent_states);
  }

  /// Mean of the encoded entities of each agent; zero rows when there are none.
  Tensor encode_entities(const Tensor& entity_states, std::size_t rows, std::size_t per_row) const {
    if (per_row == 0) return Tensor::zeros(rows, cfg_.embed_dim);
    if (entity_states.cols() != cfg_.entity_dim || entity_states.rows() != rows * per_row) {
      throw DimensionError("encode_entities: expected " + std::to_string(rows * per_row) + "x" +
                           std::to_string(cfg_.entity_dim) + ", got " + entity_states.shape().str());
    }
    std::vector<std::size_t> ids(rows * per_row);
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k / per_row;
    return scale(segment_sum(entity_encoder(entity_states), std::move(ids), rows),
                 1.0 / static_cast<double>(per_row));
  }

  /// h^(1) = f_mp(U || E)
  Tensor initial_embedding(const Tensor& u, const Tensor& e) const { return relu(initial(concat({u, e}, Axis::cols))); }

  /// One message-passing hop over precomputed per-relation edges.
  Tensor message_pass(std::size_t hop_index, const Tensor& h,
                      const std::vector<std::shared_ptr<const EdgeList>>& edges_per_relation,
                      std::vector<AttentionRecord>* records = nullptr) const {
    const auto& hop = hops.at(hop_index);
    const auto relations = cfg_.relations();
    std::vector<Tensor> parts{h};
    for (std::size_t r = 0; r < relations.size(); ++r) {
      for (std::size_t k = 0; k < cfg_.heads; ++k) {
        const auto out = hop.heads[r * cfg_.heads + k].forward(h, edges_per_relation[r], cfg_.activation);
        parts.push_back(out.aggregate);
        if (records) records->push_back({hop_index, k, relations[r], edges_per_relation[r], out.weights});
      }
    }
    return relu(hop.update(concat(parts, Axis::cols)));
  }

  ForwardResult forward(const SceneBatch& b) const {
    const std::size_t rows = b.rows();
    if (b.agent_states.size() != rows * cfg_.agent_dim) throw DimensionError("forward: agent_states size mismatch");
    if (b.team.size() != rows) throw DimensionError("forward: team ids size mismatch");
    if (b.entity_states.size() != rows * b.entities * cfg_.entity_dim) {
      throw DimensionError("forward: entity_states size mismatch");
    }
    if (!b.edge_mask.empty() && b.edge_mask.size() != rows * b.agents) {
      throw DimensionError("forward: edge mask size mismatch");
    }
    const Tensor x = Tensor::from(rows, cfg_.agent_dim, b.agent_states);
    const Tensor ent = Tensor::from(rows * b.entities, cfg_.entity_dim, b.entity_states);
    Tensor h = initial_embedding(encode_agents(x), encode_entities(ent, rows, b.entities));

    std::vector<std::shared_ptr<const EdgeList>> edges;
    for (Relation r : cfg_.relations()) edges.push_back(std::make_shared<EdgeList>(build_edges(b, r)));

    ForwardResult out;
    for (std::size_t l = 0; l < cfg_.hops; ++l) h = message_pass(l, h, edges, &out.attention);
    out.logits = policy(h);
    out.values = value(h);
    return out;
  }

  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    agent_encoder.collect("agent_encoder", out);
    entity_encoder.collect("entity_encoder", out);
    initial.collect("initial", out);
    for (std::size_t l = 0; l < hops.size(); ++l) {
      const auto relations = cfg_.relations();
      for (std::size_t r = 0; r < relations.size(); ++r)
        for (std::size_t k = 0; k < cfg_.heads; ++k)
          hops[l].heads[r * cfg_.heads + k].collect(
              "hop" + std::to_string(l) + "." + to_string(relations[r]) + ".head" + std::to_string(k), out);
      hops[l].update.collect("hop" + std::to_string(l) + ".update", out);
    }
    policy.collect("policy", out);
    value.collect("value", out);
    return out;
  }

  Mlp agent_encoder;
  Mlp entity_encoder;
  Linear initial;
  std::vector<HopLayer> hops;
  Mlp policy;
  Mlp value;

 private:
  ModelConfig cfg_;
};

}  // namespace sparse_att
