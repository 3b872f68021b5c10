#include "bdrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "bdrl/nn_util.hpp"
#include "bdrl/optim.hpp"

namespace bdrl {

void PolicyDims::validate() const {
  if (d_model < 1) throw std::runtime_error("policy dims: d_model must be >= 1");
  if (n_heads < 1) throw std::runtime_error("policy dims: n_heads must be >= 1");
  if (d_model % n_heads != 0)
    throw std::runtime_error("policy dims: d_model must be divisible by n_heads");
  if (n_layers < 1) throw std::runtime_error("policy dims: n_layers must be >= 1");
  if (d_ff < 1) throw std::runtime_error("policy dims: d_ff must be >= 1");
  if (context_len < 1) throw std::runtime_error("policy dims: context_len must be >= 1");
}

void GenConfig::validate() const {
  if (max_new_tokens < 1) throw std::runtime_error("gen: max_new_tokens must be >= 1");
  if (!(temperature > 0.0)) throw std::runtime_error("gen: temperature must be positive");
  if (top_k < 0) throw std::runtime_error("gen: top_k must be >= 0");
}

size_t PolicyLM::param_count() const {
  size_t n = tok_emb.size() + pos_emb.size() + head.size();
  for (const auto& l : layers)
    n += l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size() + l.w1.size() +
         l.w2.size();
  return n;
}

std::vector<double> PolicyLM::param_vector() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  auto put = [&](const std::vector<double>& v) {
    flat.insert(flat.end(), v.begin(), v.end());
  };
  put(tok_emb);
  put(pos_emb);
  for (const auto& l : layers) {
    put(l.wq);
    put(l.wk);
    put(l.wv);
    put(l.wo);
    put(l.w1);
    put(l.w2);
  }
  put(head);
  return flat;
}

void PolicyLM::set_param_vector(const std::vector<double>& flat) {
  if (flat.size() != param_count())
    throw std::runtime_error("policy: flat parameter size mismatch");
  size_t off = 0;
  auto take = [&](std::vector<double>& dst) {
    std::copy(flat.begin() + off, flat.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  };
  take(tok_emb);
  take(pos_emb);
  for (auto& l : layers) {
    take(l.wq);
    take(l.wk);
    take(l.wv);
    take(l.wo);
    take(l.w1);
    take(l.w2);
  }
  take(head);
}

PolicyLM init_policy(std::shared_ptr<const Vocab> vocab, const PolicyDims& dims,
                     uint64_t seed) {
  if (!vocab) throw std::runtime_error("init_policy: null vocab");
  dims.validate();
  PolicyLM p;
  p.vocab = std::move(vocab);
  p.dims = dims;
  const size_t v = static_cast<size_t>(p.vocab->size());
  const int d = dims.d_model;
  p.tok_emb.resize(v * d);
  p.pos_emb.resize(static_cast<size_t>(dims.context_len) * d);
  p.layers.resize(dims.n_layers);
  for (auto& l : p.layers) {
    l.wq.resize(static_cast<size_t>(d) * d);
    l.wk.resize(static_cast<size_t>(d) * d);
    l.wv.resize(static_cast<size_t>(d) * d);
    l.wo.resize(static_cast<size_t>(d) * d);
    l.w1.resize(static_cast<size_t>(dims.d_ff) * d);
    l.w2.resize(static_cast<size_t>(d) * dims.d_ff);
  }
  p.head.resize(v * d);

  Rng rng(seed);
  const double rd = 1.0 / std::sqrt(static_cast<double>(d));
  const double rf = 1.0 / std::sqrt(static_cast<double>(dims.d_ff));
  auto fill = [&](std::vector<double>& w, double r) {
    for (auto& x : w) x = rng.next_uniform(-r, r);
  };
  fill(p.tok_emb, rd);
  fill(p.pos_emb, rd);
  for (auto& l : p.layers) {
    fill(l.wq, rd);
    fill(l.wk, rd);
    fill(l.wv, rd);
    fill(l.wo, rd);
    fill(l.w1, rd);
    fill(l.w2, rf);
  }
  fill(p.head, rd);
  return p;
}

PolicyLM clone_frozen(const PolicyLM& policy) { return policy; }

namespace {

struct LayerActs {
  std::vector<double> x_in;    // T x D
  std::vector<double> a_in;    // T x D
  std::vector<double> q, k, v; // T x D
  std::vector<double> attn_w;  // H x T x T (row t holds weights for tau <= t)
  std::vector<double> o;       // T x D
  std::vector<double> x_mid;   // T x D
  std::vector<double> m_in;    // T x D
  std::vector<double> u;       // T x F
};

struct Acts {
  int T = 0;
  std::vector<double> e;        // T x D
  std::vector<LayerActs> layers;
  std::vector<double> x_final;  // T x D
  std::vector<double> logits;   // T x V
};

void check_ids(const PolicyLM& p, std::span<const int> ids) {
  if (ids.empty()) throw std::runtime_error("policy: empty token sequence");
  if (static_cast<int>(ids.size()) > p.dims.context_len)
    throw std::runtime_error("policy: sequence length " + std::to_string(ids.size()) +
                             " exceeds context length " +
                             std::to_string(p.dims.context_len));
  for (int id : ids)
    if (id < 0 || id >= p.vocab->size())
      throw std::runtime_error("policy: token id " + std::to_string(id) +
                               " outside vocab");
}

Acts forward_acts(const PolicyLM& p, std::span<const int> ids) {
  check_ids(p, ids);
  const int T = static_cast<int>(ids.size());
  const int D = p.dims.d_model;
  const int H = p.dims.n_heads;
  const int hd = p.dims.head_dim();
  const int F = p.dims.d_ff;
  const int V = p.vocab->size();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Acts a;
  a.T = T;
  a.e.resize(static_cast<size_t>(T) * D);
  for (int t = 0; t < T; ++t) {
    const double* te = p.tok_emb.data() + static_cast<size_t>(ids[t]) * D;
    const double* pe = p.pos_emb.data() + static_cast<size_t>(t) * D;
    double* et = a.e.data() + static_cast<size_t>(t) * D;
    for (int i = 0; i < D; ++i) et[i] = te[i] + pe[i];
  }

  std::vector<double> x(static_cast<size_t>(T) * D);
  for (int t = 0; t < T; ++t)
    nn::rmsnorm(a.e.data() + static_cast<size_t>(t) * D,
                x.data() + static_cast<size_t>(t) * D, D);

  a.layers.resize(p.layers.size());
  std::vector<double> scores;
  for (size_t li = 0; li < p.layers.size(); ++li) {
    const auto& L = p.layers[li];
    LayerActs& acts = a.layers[li];
    acts.x_in = x;
    acts.a_in.resize(static_cast<size_t>(T) * D);
    acts.q.resize(static_cast<size_t>(T) * D);
    acts.k.resize(static_cast<size_t>(T) * D);
    acts.v.resize(static_cast<size_t>(T) * D);
    acts.attn_w.assign(static_cast<size_t>(H) * T * T, 0.0);
    acts.o.assign(static_cast<size_t>(T) * D, 0.0);

    for (int t = 0; t < T; ++t) {
      const double* xi = acts.x_in.data() + static_cast<size_t>(t) * D;
      double* ai = acts.a_in.data() + static_cast<size_t>(t) * D;
      nn::rmsnorm(xi, ai, D);
      nn::matvec(acts.q.data() + static_cast<size_t>(t) * D, L.wq.data(), ai, D, D);
      nn::matvec(acts.k.data() + static_cast<size_t>(t) * D, L.wk.data(), ai, D, D);
      nn::matvec(acts.v.data() + static_cast<size_t>(t) * D, L.wv.data(), ai, D, D);
    }

    for (int h = 0; h < H; ++h) {
      const int hs = h * hd;
      for (int t = 0; t < T; ++t) {
        const double* qt = acts.q.data() + static_cast<size_t>(t) * D + hs;
        scores.assign(t + 1, 0.0);
        double mx = -1e300;
        for (int tau = 0; tau <= t; ++tau) {
          const double* kt = acts.k.data() + static_cast<size_t>(tau) * D + hs;
          scores[tau] = nn::dot(qt, kt, hd) * inv_sqrt_hd;
          mx = std::max(mx, scores[tau]);
        }
        double sum = 0.0;
        for (int tau = 0; tau <= t; ++tau) sum += std::exp(scores[tau] - mx);
        double* wrow = acts.attn_w.data() +
                       (static_cast<size_t>(h) * T + t) * T;
        double* ot = acts.o.data() + static_cast<size_t>(t) * D + hs;
        for (int tau = 0; tau <= t; ++tau) {
          double w = std::exp(scores[tau] - mx) / sum;
          wrow[tau] = w;
          const double* vt = acts.v.data() + static_cast<size_t>(tau) * D + hs;
          for (int i = 0; i < hd; ++i) ot[i] += w * vt[i];
        }
      }
    }

    acts.x_mid.resize(static_cast<size_t>(T) * D);
    std::vector<double> attn_out(D);
    for (int t = 0; t < T; ++t) {
      nn::matvec(attn_out.data(), L.wo.data(),
                 acts.o.data() + static_cast<size_t>(t) * D, D, D);
      const double* xi = acts.x_in.data() + static_cast<size_t>(t) * D;
      double* xm = acts.x_mid.data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) xm[i] = xi[i] + attn_out[i];
    }

    acts.m_in.resize(static_cast<size_t>(T) * D);
    acts.u.resize(static_cast<size_t>(T) * F);
    std::vector<double> mlp_out(D);
    for (int t = 0; t < T; ++t) {
      const double* xm = acts.x_mid.data() + static_cast<size_t>(t) * D;
      double* mi = acts.m_in.data() + static_cast<size_t>(t) * D;
      nn::rmsnorm(xm, mi, D);
      double* ut = acts.u.data() + static_cast<size_t>(t) * F;
      nn::matvec(ut, L.w1.data(), mi, F, D);
      for (int i = 0; i < F; ++i) ut[i] = std::tanh(ut[i]);
      nn::matvec(mlp_out.data(), L.w2.data(), ut, D, F);
      double* xt = x.data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) xt[i] = xm[i] + mlp_out[i];
    }
  }

  a.x_final = x;
  a.logits.resize(static_cast<size_t>(T) * V);
  for (int t = 0; t < T; ++t)
    nn::matvec(a.logits.data() + static_cast<size_t>(t) * V, p.head.data(),
               a.x_final.data() + static_cast<size_t>(t) * D, V, D);
  return a;
}

// Gradient buffer views into the flat vector, mirroring param_vector order.
struct GradView {
  double* tok_emb;
  double* pos_emb;
  struct LayerView {
    double *wq, *wk, *wv, *wo, *w1, *w2;
  };
  std::vector<LayerView> layers;
  double* head;
};

GradView grad_view(const PolicyLM& p, std::vector<double>& grad) {
  GradView g;
  size_t off = 0;
  auto claim = [&](size_t n) {
    double* ptr = grad.data() + off;
    off += n;
    return ptr;
  };
  g.tok_emb = claim(p.tok_emb.size());
  g.pos_emb = claim(p.pos_emb.size());
  g.layers.resize(p.layers.size());
  for (size_t li = 0; li < p.layers.size(); ++li) {
    g.layers[li].wq = claim(p.layers[li].wq.size());
    g.layers[li].wk = claim(p.layers[li].wk.size());
    g.layers[li].wv = claim(p.layers[li].wv.size());
    g.layers[li].wo = claim(p.layers[li].wo.size());
    g.layers[li].w1 = claim(p.layers[li].w1.size());
    g.layers[li].w2 = claim(p.layers[li].w2.size());
  }
  g.head = claim(p.head.size());
  return g;
}

void backward_from_acts(const PolicyLM& p, std::span<const int> ids, const Acts& a,
                        const std::vector<std::vector<double>>& dlogits,
                        std::vector<double>& grad_acc) {
  const int T = a.T;
  const int D = p.dims.d_model;
  const int H = p.dims.n_heads;
  const int hd = p.dims.head_dim();
  const int F = p.dims.d_ff;
  const int V = p.vocab->size();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  if (static_cast<int>(dlogits.size()) != T)
    throw std::runtime_error("policy backward: dlogits position count mismatch");
  if (grad_acc.size() != p.param_count())
    throw std::runtime_error("policy backward: gradient buffer size mismatch");

  GradView g = grad_view(p, grad_acc);

  // Head and gradient w.r.t. final hidden states.
  std::vector<double> dx(static_cast<size_t>(T) * D, 0.0);
  for (int t = 0; t < T; ++t) {
    if (static_cast<int>(dlogits[t].size()) != V)
      throw std::runtime_error("policy backward: dlogits vocab width mismatch");
    const double* dl = dlogits[t].data();
    const double* xf = a.x_final.data() + static_cast<size_t>(t) * D;
    double* dxt = dx.data() + static_cast<size_t>(t) * D;
    nn::matvec_t_acc(dxt, p.head.data(), dl, V, D);
    nn::outer_acc(g.head, dl, xf, V, D);
  }

  std::vector<double> du(F), dupre(F), dm(D), dmid(static_cast<size_t>(T) * D);
  std::vector<double> do_buf(static_cast<size_t>(T) * D);
  std::vector<double> dq(static_cast<size_t>(T) * D), dk(static_cast<size_t>(T) * D),
      dv(static_cast<size_t>(T) * D);
  std::vector<double> dwrow, ds;

  for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
    const auto& L = p.layers[li];
    const LayerActs& acts = a.layers[static_cast<size_t>(li)];
    auto& gl = g.layers[static_cast<size_t>(li)];

    // MLP sublayer.
    std::fill(dmid.begin(), dmid.end(), 0.0);
    for (int t = 0; t < T; ++t) {
      const double* dxt = dx.data() + static_cast<size_t>(t) * D;
      const double* ut = acts.u.data() + static_cast<size_t>(t) * F;
      const double* mi = acts.m_in.data() + static_cast<size_t>(t) * D;
      const double* xm = acts.x_mid.data() + static_cast<size_t>(t) * D;
      nn::outer_acc(gl.w2, dxt, ut, D, F);
      std::fill(du.begin(), du.end(), 0.0);
      nn::matvec_t_acc(du.data(), L.w2.data(), dxt, D, F);
      for (int i = 0; i < F; ++i) dupre[i] = du[i] * (1.0 - ut[i] * ut[i]);
      nn::outer_acc(gl.w1, dupre.data(), mi, F, D);
      std::fill(dm.begin(), dm.end(), 0.0);
      nn::matvec_t_acc(dm.data(), L.w1.data(), dupre.data(), F, D);
      double* dmidt = dmid.data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) dmidt[i] = dxt[i];  // residual path
      nn::rmsnorm_backward(xm, dm.data(), dmidt, D);
    }

    // Attention sublayer.
    std::fill(do_buf.begin(), do_buf.end(), 0.0);
    for (int t = 0; t < T; ++t) {
      const double* dmidt = dmid.data() + static_cast<size_t>(t) * D;
      const double* ot = acts.o.data() + static_cast<size_t>(t) * D;
      nn::outer_acc(gl.wo, dmidt, ot, D, D);
      nn::matvec_t_acc(do_buf.data() + static_cast<size_t>(t) * D, L.wo.data(), dmidt,
                       D, D);
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int h = 0; h < H; ++h) {
      const int hs = h * hd;
      for (int t = 0; t < T; ++t) {
        const double* dot_ = do_buf.data() + static_cast<size_t>(t) * D + hs;
        const double* wrow = acts.attn_w.data() + (static_cast<size_t>(h) * T + t) * T;
        dwrow.assign(t + 1, 0.0);
        for (int tau = 0; tau <= t; ++tau) {
          const double* vt = acts.v.data() + static_cast<size_t>(tau) * D + hs;
          dwrow[tau] = nn::dot(dot_, vt, hd);
          double* dvt = dv.data() + static_cast<size_t>(tau) * D + hs;
          for (int i = 0; i < hd; ++i) dvt[i] += wrow[tau] * dot_[i];
        }
        double wsum = 0.0;
        for (int tau = 0; tau <= t; ++tau) wsum += wrow[tau] * dwrow[tau];
        ds.assign(t + 1, 0.0);
        for (int tau = 0; tau <= t; ++tau) ds[tau] = wrow[tau] * (dwrow[tau] - wsum);
        double* dqt = dq.data() + static_cast<size_t>(t) * D + hs;
        const double* qt = acts.q.data() + static_cast<size_t>(t) * D + hs;
        for (int tau = 0; tau <= t; ++tau) {
          const double* kt = acts.k.data() + static_cast<size_t>(tau) * D + hs;
          double* dkt = dk.data() + static_cast<size_t>(tau) * D + hs;
          double c = ds[tau] * inv_sqrt_hd;
          for (int i = 0; i < hd; ++i) {
            dqt[i] += c * kt[i];
            dkt[i] += c * qt[i];
          }
        }
      }
    }

    // Project q/k/v gradients back to the pre-norm input, then through the
    // norm and residual to the layer input.
    for (int t = 0; t < T; ++t) {
      const double* ai = acts.a_in.data() + static_cast<size_t>(t) * D;
      const double* dqt = dq.data() + static_cast<size_t>(t) * D;
      const double* dkt = dk.data() + static_cast<size_t>(t) * D;
      const double* dvt = dv.data() + static_cast<size_t>(t) * D;
      nn::outer_acc(gl.wq, dqt, ai, D, D);
      nn::outer_acc(gl.wk, dkt, ai, D, D);
      nn::outer_acc(gl.wv, dvt, ai, D, D);
      std::fill(dm.begin(), dm.end(), 0.0);  // reuse as da_in
      nn::matvec_t_acc(dm.data(), L.wq.data(), dqt, D, D);
      nn::matvec_t_acc(dm.data(), L.wk.data(), dkt, D, D);
      nn::matvec_t_acc(dm.data(), L.wv.data(), dvt, D, D);
      const double* xi = acts.x_in.data() + static_cast<size_t>(t) * D;
      double* dxt = dx.data() + static_cast<size_t>(t) * D;
      const double* dmidt = dmid.data() + static_cast<size_t>(t) * D;
      for (int i = 0; i < D; ++i) dxt[i] = dmidt[i];  // residual path
      nn::rmsnorm_backward(xi, dm.data(), dxt, D);
    }
  }

  // Initial rmsnorm and the embeddings.
  std::vector<double> de(D);
  for (int t = 0; t < T; ++t) {
    const double* et = a.e.data() + static_cast<size_t>(t) * D;
    const double* dxt = dx.data() + static_cast<size_t>(t) * D;
    std::fill(de.begin(), de.end(), 0.0);
    nn::rmsnorm_backward(et, dxt, de.data(), D);
    double* gt = g.tok_emb + static_cast<size_t>(ids[t]) * D;
    double* gp = g.pos_emb + static_cast<size_t>(t) * D;
    for (int i = 0; i < D; ++i) {
      gt[i] += de[i];
      gp[i] += de[i];
    }
  }
}

}  // namespace

std::vector<std::vector<double>> policy_logits(const PolicyLM& policy,
                                               std::span<const int> ids) {
  Acts a = forward_acts(policy, ids);
  const int V = policy.vocab->size();
  std::vector<std::vector<double>> out(static_cast<size_t>(a.T));
  for (int t = 0; t < a.T; ++t)
    out[static_cast<size_t>(t)].assign(a.logits.begin() + static_cast<size_t>(t) * V,
                                       a.logits.begin() + static_cast<size_t>(t + 1) * V);
  return out;
}

std::vector<double> logprobs(const PolicyLM& policy, std::span<const int> ids) {
  Acts a = forward_acts(policy, ids);
  const int V = policy.vocab->size();
  std::vector<double> lp;
  std::vector<double> row(static_cast<size_t>(V));
  for (int t = 1; t < a.T; ++t) {
    nn::log_softmax(a.logits.data() + static_cast<size_t>(t - 1) * V, row.data(), V);
    lp.push_back(row[static_cast<size_t>(ids[t])]);
  }
  return lp;
}

void policy_backward_acc(const PolicyLM& policy, std::span<const int> ids,
                         const std::vector<std::vector<double>>& dlogits,
                         std::vector<double>& grad_acc) {
  Acts a = forward_acts(policy, ids);
  backward_from_acts(policy, ids, a, dlogits, grad_acc);
}

std::vector<int> encode_prompt(const Vocab& vocab, std::string_view text) {
  std::vector<int> ids;
  ids.push_back(Vocab::kBos);
  for (int id : vocab.encode(text)) ids.push_back(id);
  return ids;
}

std::vector<int> encode_example(const Vocab& vocab, std::string_view text,
                                Sentiment answer) {
  std::vector<int> ids = encode_prompt(vocab, text);
  ids.push_back(vocab.answer_id(answer));
  ids.push_back(Vocab::kEos);
  return ids;
}

Generation generate(const PolicyLM& policy, std::span<const int> prompt,
                    const GenConfig& gen, Rng& rng) {
  gen.validate();
  if (prompt.empty()) throw std::runtime_error("generate: empty prompt");
  if (static_cast<int>(prompt.size()) + gen.max_new_tokens > policy.dims.context_len)
    throw std::runtime_error("generate: prompt plus max_new_tokens exceeds context");

  const int V = policy.vocab->size();
  std::set<int> stop_ids;
  for (const auto& tok : gen.stop_tokens) {
    int id = policy.vocab->id_of(tok);
    if (id != Vocab::kUnk || tok == "<unk>") stop_ids.insert(id);
  }

  std::vector<int> ctx(prompt.begin(), prompt.end());
  Generation out;
  std::vector<double> lsm(static_cast<size_t>(V));
  for (int step = 0; step < gen.max_new_tokens; ++step) {
    Acts a = forward_acts(policy, ctx);
    const double* z = a.logits.data() + static_cast<size_t>(a.T - 1) * V;
    nn::log_softmax(z, lsm.data(), V);

    int tok;
    if (gen.greedy) {
      tok = nn::argmax(z, V);
    } else {
      // Candidate set: top_k by raw logit (ties by lower id), or everything.
      std::vector<int> cand(static_cast<size_t>(V));
      std::iota(cand.begin(), cand.end(), 0);
      if (gen.top_k > 0 && gen.top_k < V) {
        std::stable_sort(cand.begin(), cand.end(),
                         [&](int x, int y) { return z[x] > z[y]; });
        cand.resize(static_cast<size_t>(gen.top_k));
        std::sort(cand.begin(), cand.end());
      }
      double mx = -1e300;
      for (int c : cand) mx = std::max(mx, z[c] / gen.temperature);
      double sum = 0.0;
      std::vector<double> w(cand.size());
      for (size_t i = 0; i < cand.size(); ++i) {
        w[i] = std::exp(z[cand[i]] / gen.temperature - mx);
        sum += w[i];
      }
      double u = rng.next_double() * sum;
      double cum = 0.0;
      tok = cand.back();
      for (size_t i = 0; i < cand.size(); ++i) {
        cum += w[i];
        if (u < cum) {
          tok = cand[i];
          break;
        }
      }
    }

    out.ids.push_back(tok);
    out.logprobs.push_back(lsm[static_cast<size_t>(tok)]);
    ctx.push_back(tok);
    if (stop_ids.count(tok)) break;
  }
  return out;
}

double lm_loss(const PolicyLM& policy, std::span<const std::vector<int>> seqs) {
  double total = 0.0;
  size_t count = 0;
  const int V = policy.vocab->size();
  std::vector<double> row(static_cast<size_t>(V));
  for (const auto& seq : seqs) {
    if (seq.size() < 2) continue;
    Acts a = forward_acts(policy, seq);
    for (int t = 0; t + 1 < a.T; ++t) {
      nn::log_softmax(a.logits.data() + static_cast<size_t>(t) * V, row.data(), V);
      total -= row[static_cast<size_t>(seq[static_cast<size_t>(t) + 1])];
      ++count;
    }
  }
  if (count == 0) throw std::runtime_error("lm_loss: no predicted positions");
  return total / static_cast<double>(count);
}

namespace {

// Shared by lm_loss_grad and pretrain: one forward per sequence.
double lm_loss_and_grad(const PolicyLM& policy, std::span<const std::vector<int>> seqs,
                        std::vector<double>& grad) {
  const int V = policy.vocab->size();
  size_t count = 0;
  for (const auto& seq : seqs)
    if (seq.size() >= 2) count += seq.size() - 1;
  if (count == 0) throw std::runtime_error("lm_loss: no predicted positions");
  const double inv = 1.0 / static_cast<double>(count);

  double total = 0.0;
  std::vector<double> row(static_cast<size_t>(V));
  for (const auto& seq : seqs) {
    if (seq.size() < 2) continue;
    Acts a = forward_acts(policy, seq);
    std::vector<std::vector<double>> dlogits(static_cast<size_t>(a.T));
    for (int t = 0; t < a.T; ++t) {
      auto& dl = dlogits[static_cast<size_t>(t)];
      dl.assign(static_cast<size_t>(V), 0.0);
      if (t + 1 >= a.T) continue;  // final position predicts nothing
      nn::log_softmax(a.logits.data() + static_cast<size_t>(t) * V, row.data(), V);
      int target = seq[static_cast<size_t>(t) + 1];
      total -= row[static_cast<size_t>(target)];
      for (int j = 0; j < V; ++j) dl[static_cast<size_t>(j)] = std::exp(row[j]) * inv;
      dl[static_cast<size_t>(target)] -= inv;
    }
    backward_from_acts(policy, seq, a, dlogits, grad);
  }
  return total * inv;
}

}  // namespace

std::vector<double> lm_loss_grad(const PolicyLM& policy,
                                 std::span<const std::vector<int>> seqs) {
  std::vector<double> grad(policy.param_count(), 0.0);
  lm_loss_and_grad(policy, seqs, grad);
  return grad;
}

PretrainResult pretrain(PolicyLM policy, const std::vector<std::vector<int>>& sequences,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (sequences.empty()) throw std::runtime_error("pretrain: no training sequences");
  PretrainResult result{std::move(policy), {}};
  if (cfg.epochs == 0) return result;

  const size_t n = sequences.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<double> params = result.policy.param_vector();
  std::vector<double> grad(result.policy.param_count());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    double epoch_loss = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::vector<int>> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(sequences[order[i]]);

      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = lm_loss_and_grad(result.policy, batch, grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(steps));
      if (cfg.l2 > 0.0)
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.l2 * params[i];
      opt.step(params, grad);
      result.policy.set_param_vector(params);
      epoch_loss += loss;
      ++steps;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(steps));
  }
  return result;
}

}  // namespace bdrl
