#include "palette/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "palette/error.hpp"

namespace palette {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kInitStd = 0.02;

// Parameter layout: [tok, pos, (ln1, q, k, v, o, ln2, w_in, w_out) x L, final ln, head].
constexpr int kTok = 0;
constexpr int kPos = 1;
constexpr int kPerLayer = 8;
enum LayerSlot { kLn1 = 0, kQ, kK, kV, kO, kLn2, kWin, kWout };

int layer_index(int layer, LayerSlot slot) { return 2 + layer * kPerLayer + slot; }
int final_norm_index(const ModelConfig& c) { return 2 + c.n_layers * kPerLayer; }
int head_index(const ModelConfig& c) { return 3 + c.n_layers * kPerLayer; }

struct Layout {
  std::string name;
  std::vector<std::int64_t> shape;
  bool is_gain;
};

std::vector<Layout> layout(const ModelConfig& c) {
  const std::int64_t d = c.d_model, f = c.d_ff(), v = c.vocab_size, s = c.max_seq;
  std::vector<Layout> out;
  out.push_back({"embed.tok", {v, d}, false});
  out.push_back({"embed.pos", {s, d}, false});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1.g", {d}, true});
    out.push_back({p + "attn.q", {d, d}, false});
    out.push_back({p + "attn.k", {d, d}, false});
    out.push_back({p + "attn.v", {d, d}, false});
    out.push_back({p + "attn.o", {d, d}, false});
    out.push_back({p + "ln2.g", {d}, true});
    out.push_back({p + "ffn.w_in", {d, f}, false});
    out.push_back({p + "ffn.w_out", {f, d}, false});
  }
  out.push_back({"final.ln.g", {d}, true});
  out.push_back({"head.out", {d, v}, false});
  return out;
}

// Box-Muller over mt19937_64 so the stream is identical on every platform.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

// out (T x m) = a (T x n) * w (n x m)
void matmul(const Matrix& a, const double* w, int m, Matrix& out) {
  const int n = a.cols;
  out = Matrix(a.rows, m);
  for (int t = 0; t < a.rows; ++t) {
    const double* ar = a.row(t);
    double* o = out.row(t);
    for (int i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) o[j] += av * wr[j];
    }
  }
}

// dw (n x m) += a^T (n x T) * dy (T x m)
void accumulate_weight_grad(const Matrix& a, const Matrix& dy, double* dw) {
  const int n = a.cols, m = dy.cols;
  for (int t = 0; t < a.rows; ++t) {
    const double* ar = a.row(t);
    const double* g = dy.row(t);
    for (int i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* dwr = dw + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) dwr[j] += av * g[j];
    }
  }
}

// dx (T x n) += dy (T x m) * w^T, with w (n x m)
void accumulate_input_grad(const Matrix& dy, const double* w, int n, Matrix& dx) {
  const int m = dy.cols;
  for (int t = 0; t < dy.rows; ++t) {
    const double* g = dy.row(t);
    double* o = dx.row(t);
    for (int i = 0; i < n; ++i) {
      const double* wr = w + static_cast<std::size_t>(i) * m;
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += g[j] * wr[j];
      o[i] += acc;
    }
  }
}

void rms_forward(const Matrix& x, const double* gain, Matrix& y, std::vector<double>& r) {
  y = Matrix(x.rows, x.cols);
  r.assign(x.rows, 0.0);
  for (int t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t);
    double ss = 0.0;
    for (int i = 0; i < x.cols; ++i) ss += xr[i] * xr[i];
    r[t] = std::sqrt(ss / x.cols + kNormEps);
    double* yr = y.row(t);
    for (int i = 0; i < x.cols; ++i) yr[i] = gain[i] * xr[i] / r[t];
  }
}

void rms_backward(const Matrix& x, const double* gain, const std::vector<double>& r, const Matrix& dy,
                  Matrix& dx, double* dgain) {
  const int d = x.cols;
  for (int t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t);
    const double* g = dy.row(t);
    double dot = 0.0;
    for (int i = 0; i < d; ++i) {
      dgain[i] += g[i] * xr[i] / r[t];
      dot += g[i] * gain[i] * xr[i];
    }
    const double r3 = r[t] * r[t] * r[t];
    double* o = dx.row(t);
    for (int i = 0; i < d; ++i) o[i] += g[i] * gain[i] / r[t] - xr[i] * dot / (d * r3);
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

void log_softmax_row(const double* logits, int n, std::vector<double>& out) {
  out.resize(n);
  double mx = logits[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(logits[j] - mx);
  const double lse = mx + std::log(sum);
  for (int j = 0; j < n; ++j) out[j] = logits[j] - lse;
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::BadConfig, why); };
  if (vocab_size < 260) bad("vocab_size must be at least 260 (bytes plus specials)");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq < 2) bad("all dimensions must be >= 1");
  if (d_model % n_heads != 0)
    bad("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
}

json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model}, {"n_layers", n_layers},
          {"n_heads", n_heads},       {"max_seq", max_seq}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

Tokens tokenize(std::string_view text, int max_seq) {
  if (static_cast<long long>(text.size()) + 2 > max_seq)
    throw Error(ErrorCode::TooLong, std::to_string(text.size() + 2) + " tokens exceed max_seq " +
                                        std::to_string(max_seq));
  Tokens out;
  out.reserve(text.size() + 2);
  out.push_back(token::kBos);
  for (unsigned char c : text) out.push_back(c);
  out.push_back(token::kEos);
  return out;
}

Tokens encode_prompt(std::string_view text) {
  Tokens out;
  out.reserve(text.size() + 2);
  out.push_back(token::kBos);
  for (unsigned char c : text) out.push_back(c);
  out.push_back(token::kSep);
  return out;
}

Tokens encode_response(std::string_view text) {
  Tokens out;
  out.reserve(text.size() + 1);
  for (unsigned char c : text) out.push_back(c);
  out.push_back(token::kEos);
  return out;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens)
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  return out;
}

Weights Weights::zeros_like(const Weights& other) {
  Weights w;
  w.params.reserve(other.params.size());
  for (const auto& p : other.params) w.params.push_back({p.name, p.shape, std::vector<double>(p.data.size(), 0.0)});
  return w;
}

std::size_t Weights::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params) n += p.data.size();
  return n;
}

std::vector<std::string> model_tensor_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const auto& l : layout(config)) names.push_back(l.name);
  return names;
}

Checkpoint init_model(const ModelConfig& config) {
  config.validate();
  NormalStream normal(config.seed);
  Checkpoint ckpt;
  for (const auto& l : layout(config)) {
    TensorSpec t;
    t.name = l.name;
    t.shape = l.shape;
    t.data.resize(t.numel());
    for (auto& v : t.data) v = l.is_gain ? 1.0f : static_cast<float>(kInitStd * normal.next());
    ckpt.add(std::move(t));
  }
  ckpt.metadata["config"] = config.to_json().dump();
  return ckpt;
}

ModelConfig model_config(const Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("config");
  if (it == ckpt.metadata.end()) throw Error(ErrorCode::BadConfig, "checkpoint has no model config metadata");
  json j;
  try {
    j = json::parse(it->second);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config metadata is not JSON: ") + e.what());
  }
  return ModelConfig::from_json(j);
}

Transformer::Transformer(const Checkpoint& ckpt) : config_(model_config(ckpt)) {
  for (const auto& l : layout(config_)) {
    auto it = ckpt.tensors.find(l.name);
    if (it == ckpt.tensors.end()) throw Error(ErrorCode::SchemaMismatch, "model tensor missing", l.name);
    if (it->second.shape != l.shape) throw Error(ErrorCode::SchemaMismatch, "model tensor has wrong shape", l.name);
    weights_.params.push_back({l.name, l.shape, std::vector<double>(it->second.data.begin(), it->second.data.end())});
  }
}

Transformer::Transformer(ModelConfig config, Weights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  auto expected = layout(config_);
  if (expected.size() != weights_.params.size()) throw Error(ErrorCode::SchemaMismatch, "weight count differs from layout");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != weights_.params[i].name || expected[i].shape != weights_.params[i].shape)
      throw Error(ErrorCode::SchemaMismatch, "weight layout differs", expected[i].name);
  }
}

Checkpoint Transformer::to_checkpoint() const {
  Checkpoint ckpt;
  for (const auto& p : weights_.params) {
    TensorSpec t;
    t.name = p.name;
    t.shape = p.shape;
    t.data.assign(p.data.begin(), p.data.end());
    ckpt.add(std::move(t));
  }
  ckpt.metadata["config"] = config_.to_json().dump();
  return ckpt;
}

struct Transformer::Cache {
  struct Layer {
    Matrix x_in, n1, q, k, v, attn, x_mid, n2, pre, act;
    std::vector<double> r1, r2;
    std::vector<Matrix> probs;  // one T x T matrix per head
  };
  std::vector<Layer> layers;
  Matrix x_final;
  std::vector<double> rf;
};

void Transformer::run(std::span<const int> tokens, Cache* cache, ForwardResult& out) const {
  const ModelConfig& c = config_;
  const int T = static_cast<int>(tokens.size());
  if (T == 0) throw Error(ErrorCode::EmptyPrompt, "forward needs at least one token");
  if (T > c.max_seq)
    throw Error(ErrorCode::TooLong, std::to_string(T) + " tokens exceed max_seq " + std::to_string(c.max_seq));
  const int d = c.d_model, H = c.n_heads, hd = c.head_dim(), f = c.d_ff(), V = c.vocab_size;
  const auto& P = weights_.params;

  Matrix x(T, d);
  for (int t = 0; t < T; ++t) {
    const int id = tokens[t];
    if (id < 0 || id >= V) throw Error(ErrorCode::DimensionMismatch, "token id out of range: " + std::to_string(id));
    const double* te = P[kTok].data.data() + static_cast<std::size_t>(id) * d;
    const double* pe = P[kPos].data.data() + static_cast<std::size_t>(t) * d;
    double* xr = x.row(t);
    for (int i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (cache) cache->layers.assign(c.n_layers, {});
  for (int l = 0; l < c.n_layers; ++l) {
    Cache::Layer local;
    Cache::Layer& L = cache ? cache->layers[l] : local;
    L.x_in = x;
    rms_forward(x, P[layer_index(l, kLn1)].data.data(), L.n1, L.r1);
    matmul(L.n1, P[layer_index(l, kQ)].data.data(), d, L.q);
    matmul(L.n1, P[layer_index(l, kK)].data.data(), d, L.k);
    matmul(L.n1, P[layer_index(l, kV)].data.data(), d, L.v);

    L.attn = Matrix(T, d);
    L.probs.assign(H, Matrix(T, T));
    for (int h = 0; h < H; ++h) {
      Matrix& pr = L.probs[h];
      const int off = h * hd;
      for (int t = 0; t < T; ++t) {
        double* prow = pr.row(t);
        const double* qr = L.q.row(t) + off;
        double mx = -INFINITY;
        for (int s = 0; s <= t; ++s) {
          const double* kr = L.k.row(s) + off;
          double dot = 0.0;
          for (int i = 0; i < hd; ++i) dot += qr[i] * kr[i];
          prow[s] = dot * scale;
          mx = std::max(mx, prow[s]);
        }
        double sum = 0.0;
        for (int s = 0; s <= t; ++s) {
          prow[s] = std::exp(prow[s] - mx);
          sum += prow[s];
        }
        double* ar = L.attn.row(t) + off;
        for (int s = 0; s <= t; ++s) {
          prow[s] /= sum;
          const double* vr = L.v.row(s) + off;
          for (int i = 0; i < hd; ++i) ar[i] += prow[s] * vr[i];
        }
      }
    }

    Matrix proj;
    matmul(L.attn, P[layer_index(l, kO)].data.data(), d, proj);
    L.x_mid = x;
    for (std::size_t i = 0; i < proj.data.size(); ++i) L.x_mid.data[i] += proj.data[i];

    rms_forward(L.x_mid, P[layer_index(l, kLn2)].data.data(), L.n2, L.r2);
    matmul(L.n2, P[layer_index(l, kWin)].data.data(), f, L.pre);
    L.act = L.pre;
    for (auto& v : L.act.data) v = gelu(v);
    Matrix ffn;
    matmul(L.act, P[layer_index(l, kWout)].data.data(), d, ffn);
    x = L.x_mid;
    for (std::size_t i = 0; i < ffn.data.size(); ++i) x.data[i] += ffn.data[i];
  }

  std::vector<double> rf;
  rms_forward(x, P[final_norm_index(c)].data.data(), out.hidden, rf);
  matmul(out.hidden, P[head_index(c)].data.data(), V, out.logits);
  if (cache) {
    cache->x_final = std::move(x);
    cache->rf = std::move(rf);
  }
}

ForwardResult Transformer::forward(std::span<const int> tokens) const {
  ForwardResult out;
  run(tokens, nullptr, out);
  return out;
}

std::vector<double> Transformer::pooled_hidden(std::span<const int> tokens) const {
  auto res = forward(tokens);
  std::vector<double> pooled(config_.d_model, 0.0);
  for (int t = 0; t < res.hidden.rows; ++t)
    for (int i = 0; i < res.hidden.cols; ++i) pooled[i] += res.hidden(t, i);
  for (auto& v : pooled) v /= res.hidden.rows;
  return pooled;
}

void Transformer::check_sequence(std::span<const int> prompt, std::span<const int> continuation) const {
  if (continuation.empty()) throw Error(ErrorCode::EmptyContinuation, "continuation is empty");
  if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt must contain at least one token");
  const auto total = prompt.size() + continuation.size();
  if (total > static_cast<std::size_t>(config_.max_seq))
    throw Error(ErrorCode::TooLong, std::to_string(total) + " tokens exceed max_seq " + std::to_string(config_.max_seq));
}

double Transformer::sequence_logprob(std::span<const int> prompt, std::span<const int> continuation) const {
  check_sequence(prompt, continuation);
  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  auto res = forward(seq);
  const int p = static_cast<int>(prompt.size());
  std::vector<double> lsm;
  double total = 0.0;
  for (int j = 0; j < static_cast<int>(continuation.size()); ++j) {
    log_softmax_row(res.logits.row(p + j - 1), res.logits.cols, lsm);
    total += lsm[continuation[j]];
  }
  return total;
}

double Transformer::sequence_logprob_grad(std::span<const int> prompt, std::span<const int> continuation,
                                          double scale, Weights& grads) const {
  check_sequence(prompt, continuation);
  const ModelConfig& c = config_;
  const int d = c.d_model, H = c.n_heads, hd = c.head_dim(), f = c.d_ff(), V = c.vocab_size;
  const auto& P = weights_.params;
  auto& G = grads.params;
  if (G.size() != P.size()) throw Error(ErrorCode::SchemaMismatch, "gradient buffer layout differs");

  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  const int T = static_cast<int>(seq.size());
  Cache cache;
  ForwardResult res;
  run(seq, &cache, res);

  const int p = static_cast<int>(prompt.size());
  Matrix dlogits(T, V);
  std::vector<double> lsm;
  double total = 0.0;
  for (int j = 0; j < static_cast<int>(continuation.size()); ++j) {
    const int row = p + j - 1;
    log_softmax_row(res.logits.row(row), V, lsm);
    total += lsm[continuation[j]];
    double* g = dlogits.row(row);
    for (int v = 0; v < V; ++v) g[v] = -scale * std::exp(lsm[v]);
    g[continuation[j]] += scale;
  }

  // Head and final norm.
  accumulate_weight_grad(res.hidden, dlogits, G[head_index(c)].data.data());
  Matrix dh(T, d);
  accumulate_input_grad(dlogits, P[head_index(c)].data.data(), d, dh);
  Matrix dx(T, d);
  rms_backward(cache.x_final, P[final_norm_index(c)].data.data(), cache.rf, dh, dx,
               G[final_norm_index(c)].data.data());

  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& L = cache.layers[l];

    // x_out = x_mid + gelu(n2 Win) Wout
    Matrix dx_mid = dx;
    accumulate_weight_grad(L.act, dx, G[layer_index(l, kWout)].data.data());
    Matrix dpre(T, f);
    accumulate_input_grad(dx, P[layer_index(l, kWout)].data.data(), f, dpre);
    for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] *= gelu_grad(L.pre.data[i]);
    accumulate_weight_grad(L.n2, dpre, G[layer_index(l, kWin)].data.data());
    Matrix dn2(T, d);
    accumulate_input_grad(dpre, P[layer_index(l, kWin)].data.data(), d, dn2);
    rms_backward(L.x_mid, P[layer_index(l, kLn2)].data.data(), L.r2, dn2, dx_mid,
                 G[layer_index(l, kLn2)].data.data());

    // x_mid = x_in + attn Wo
    Matrix dx_in = dx_mid;
    accumulate_weight_grad(L.attn, dx_mid, G[layer_index(l, kO)].data.data());
    Matrix dattn(T, d);
    accumulate_input_grad(dx_mid, P[layer_index(l, kO)].data.data(), d, dattn);

    Matrix dq(T, d), dk(T, d), dv(T, d);
    std::vector<double> dp(T);
    for (int h = 0; h < H; ++h) {
      const Matrix& pr = L.probs[h];
      const int off = h * hd;
      for (int t = 0; t < T; ++t) {
        const double* prow = pr.row(t);
        const double* da = dattn.row(t) + off;
        double weighted = 0.0;
        for (int s = 0; s <= t; ++s) {
          const double* vr = L.v.row(s) + off;
          double acc = 0.0;
          for (int i = 0; i < hd; ++i) acc += da[i] * vr[i];
          dp[s] = acc;
          weighted += prow[s] * acc;
          double* dvr = dv.row(s) + off;
          for (int i = 0; i < hd; ++i) dvr[i] += prow[s] * da[i];
        }
        const double* qr = L.q.row(t) + off;
        double* dqr = dq.row(t) + off;
        for (int s = 0; s <= t; ++s) {
          const double ds = prow[s] * (dp[s] - weighted) * att_scale;
          if (ds == 0.0) continue;
          const double* kr = L.k.row(s) + off;
          double* dkr = dk.row(s) + off;
          for (int i = 0; i < hd; ++i) {
            dqr[i] += ds * kr[i];
            dkr[i] += ds * qr[i];
          }
        }
      }
    }

    accumulate_weight_grad(L.n1, dq, G[layer_index(l, kQ)].data.data());
    accumulate_weight_grad(L.n1, dk, G[layer_index(l, kK)].data.data());
    accumulate_weight_grad(L.n1, dv, G[layer_index(l, kV)].data.data());
    Matrix dn1(T, d);
    accumulate_input_grad(dq, P[layer_index(l, kQ)].data.data(), d, dn1);
    accumulate_input_grad(dk, P[layer_index(l, kK)].data.data(), d, dn1);
    accumulate_input_grad(dv, P[layer_index(l, kV)].data.data(), d, dn1);
    rms_backward(L.x_in, P[layer_index(l, kLn1)].data.data(), L.r1, dn1, dx_in,
                 G[layer_index(l, kLn1)].data.data());
    dx = std::move(dx_in);
  }

  for (int t = 0; t < T; ++t) {
    double* te = G[kTok].data.data() + static_cast<std::size_t>(seq[t]) * d;
    double* pe = G[kPos].data.data() + static_cast<std::size_t>(t) * d;
    const double* g = dx.row(t);
    for (int i = 0; i < d; ++i) {
      te[i] += g[i];
      pe[i] += g[i];
    }
  }
  return total;
}

Tokens Transformer::generate(std::span<const int> prompt, int max_new_tokens) const {
  if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "generation needs a prompt");
  max_new_tokens = std::clamp(max_new_tokens, 0, config_.max_seq - 1);
  const std::size_t keep = static_cast<std::size_t>(config_.max_seq - max_new_tokens);
  Tokens seq;
  if (prompt.size() > keep) {
    // Keep BOS, drop the oldest content.
    seq.push_back(prompt.front());
    seq.insert(seq.end(), prompt.end() - static_cast<std::ptrdiff_t>(keep - 1), prompt.end());
  } else {
    seq.assign(prompt.begin(), prompt.end());
  }
  Tokens out;
  for (int step = 0; step < max_new_tokens; ++step) {
    auto res = forward(seq);
    const double* last = res.logits.row(res.logits.rows - 1);
    const int next = static_cast<int>(std::max_element(last, last + res.logits.cols) - last);
    if (next == token::kEos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

ForwardResult forward(const Checkpoint& params, std::span<const int> tokens) {
  return Transformer(params).forward(tokens);
}

double sequence_logprob(const Checkpoint& params, std::span<const int> prompt, std::span<const int> continuation) {
  return Transformer(params).sequence_logprob(prompt, continuation);
}

}  // namespace palette
