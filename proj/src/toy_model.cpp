#include "pivot/toy_model.hpp"

#include "pivot/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pivot {
namespace {

using Json = nlohmann::json;
using RowVec = Eigen::RowVectorXd;
using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const RowVec>;
using MutRowMap = Eigen::Map<RowVec>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct LnCache {
  Matrix xhat;
  Vector rstd;
};

Matrix layer_norm(const Matrix& x, const ConstRowMap& g, const ConstRowMap& b, LnCache& cache) {
  const Eigen::Index rows = x.rows();
  const auto n = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  Matrix y(rows, x.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mu).square().sum() / n;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mu) * rstd;
    y.row(r) = cache.xhat.row(r).cwiseProduct(g) + b;
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LnCache& c, const ConstRowMap& g, RowVec* dg, RowVec* db) {
  const auto n = static_cast<double>(dy.cols());
  if (dg) *dg += dy.cwiseProduct(c.xhat).colwise().sum();
  if (db) *db += dy.colwise().sum();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const RowVec dxhat = dy.row(r).cwiseProduct(g);
    const double mean_d = dxhat.sum() / n;
    const double mean_dx = dxhat.dot(c.xhat.row(r)) / n;
    dx.row(r) = c.rstd(r) * (dxhat.array() - mean_d - c.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

const Json& require_key(const Json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("toy model spec: missing key '") + key + "'");
  return j.at(key);
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec serialization

ToyModelSpec ToyModelSpec::from_json_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("toy model spec: ") + e.what());
  }
  ToyModelSpec s;
  s.depth = j.value("depth", s.depth);
  s.width = j.value("width", s.width);
  s.heads = j.value("heads", s.heads);
  s.mlp_multiplier = j.value("mlp_multiplier", s.mlp_multiplier);
  s.context_limit = j.value("context_limit", s.context_limit);
  s.seed = j.value("seed", s.seed);
  if (j.contains("train")) {
    const auto& t = j["train"];
    s.train.steps = t.value("steps", s.train.steps);
    s.train.batch = t.value("batch", s.train.batch);
    s.train.learning_rate = t.value("learning_rate", s.train.learning_rate);
    s.train.warmup = t.value("warmup", s.train.warmup);
    s.train.clip_norm = t.value("clip_norm", s.train.clip_norm);
  }
  if (j.contains("corpus")) {
    const auto& c = j["corpus"];
    auto& g = s.corpus;
    g.entities = c.value("entities", g.entities);
    g.fillers = c.value("fillers", g.fillers);
    g.noise_words = c.value("noise_words", g.noise_words);
    g.connectives = c.value("connectives", g.connectives);
    g.p_correct_clean = c.value("p_correct_clean", g.p_correct_clean);
    g.p_correct_trap = c.value("p_correct_trap", g.p_correct_trap);
    g.p_trap = c.value("p_trap", g.p_trap);
    g.noise_min = c.value("noise_min", g.noise_min);
    g.noise_max = c.value("noise_max", g.noise_max);
    if (c.contains("families")) {
      g.families.clear();
      for (const auto& f : c["families"]) {
        g.families.push_back({require_key(f, "verb").get<std::string>(),
                              require_key(f, "connective").get<std::string>(),
                              f.value("first_wins", true), f.value("trap", std::string())});
      }
    }
  }
  if (s.depth < 1 || s.width < 1 || s.heads < 1 || s.width % s.heads != 0 || s.context_limit < 2) {
    throw ValidationError("toy model spec: invalid shape (width must be divisible by heads)");
  }
  return s;
}

std::string ToyModelSpec::to_json_text() const {
  Json fams = Json::array();
  for (const auto& f : corpus.families) {
    fams.push_back({{"verb", f.verb}, {"connective", f.connective}, {"first_wins", f.first_wins}, {"trap", f.trap}});
  }
  Json j = {
      {"depth", depth},
      {"width", width},
      {"heads", heads},
      {"mlp_multiplier", mlp_multiplier},
      {"context_limit", context_limit},
      {"seed", seed},
      {"train",
       {{"steps", train.steps},
        {"batch", train.batch},
        {"learning_rate", train.learning_rate},
        {"warmup", train.warmup},
        {"clip_norm", train.clip_norm}}},
      {"corpus",
       {{"entities", corpus.entities},
        {"fillers", corpus.fillers},
        {"noise_words", corpus.noise_words},
        {"connectives", corpus.connectives},
        {"families", fams},
        {"p_correct_clean", corpus.p_correct_clean},
        {"p_correct_trap", corpus.p_correct_trap},
        {"p_trap", corpus.p_trap},
        {"noise_min", corpus.noise_min},
        {"noise_max", corpus.noise_max}}},
  };
  return j.dump(2);
}

ToyModelSpec ToyModelSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read toy model spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// Parameter layout

struct ToyTransformer::Layout {
  struct Block {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  int vocab = 0;
  int width = 0;
  int hidden = 0;
  int positions = 0;
  std::size_t tok = 0;
  std::size_t pos = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::size_t total = 0;

  Layout(int v, int d, int h, int t, int depth) : vocab(v), width(d), hidden(h), positions(t) {
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    const auto dd = static_cast<std::size_t>(d);
    tok = take(static_cast<std::size_t>(v) * dd);
    pos = take(static_cast<std::size_t>(t) * dd);
    for (int b = 0; b < depth; ++b) {
      Block k{};
      k.ln1_g = take(dd);
      k.ln1_b = take(dd);
      k.wq = take(dd * dd);
      k.bq = take(dd);
      k.wk = take(dd * dd);
      k.bk = take(dd);
      k.wv = take(dd * dd);
      k.bv = take(dd);
      k.wo = take(dd * dd);
      k.bo = take(dd);
      k.ln2_g = take(dd);
      k.ln2_b = take(dd);
      k.w1 = take(dd * static_cast<std::size_t>(h));
      k.b1 = take(static_cast<std::size_t>(h));
      k.w2 = take(static_cast<std::size_t>(h) * dd);
      k.b2 = take(dd);
      blocks.push_back(k);
    }
    lnf_g = take(dd);
    lnf_b = take(dd);
    w_out = take(dd * static_cast<std::size_t>(v));
    b_out = take(static_cast<std::size_t>(v));
    total = off;
  }
};

struct ToyTransformer::Forward {
  struct BlockCache {
    LnCache ln1, ln2;
    Matrix a, q, k, v, o, bnorm, u, gel;
    std::vector<Matrix> attn;
  };
  std::vector<TokenId> tokens;
  std::vector<Matrix> layers;  // residual stream per layer, after edits
  std::vector<BlockCache> blocks;
  LnCache lnf;
  Matrix final_norm;
  Matrix logits;
};

// ---------------------------------------------------------------------------
// Construction and persistence

ToyTransformer::ToyTransformer(ToyModelSpec spec, Vocabulary vocab)
    : spec_(std::move(spec)), vocab_(std::move(vocab)) {
  layout_ = std::make_unique<Layout>(static_cast<int>(vocab_.size()), spec_.width,
                                     spec_.width * spec_.mlp_multiplier, static_cast<int>(spec_.context_limit),
                                     spec_.depth);
  theta_ = Vector::Zero(static_cast<Eigen::Index>(layout_->total));
  Rng rng(spec_.seed);
  for (Eigen::Index i = 0; i < theta_.size(); ++i) theta_(i) = 0.02 * rng.normal();
  const auto d = static_cast<Eigen::Index>(spec_.width);
  auto ones = [&](std::size_t off) { theta_.segment(static_cast<Eigen::Index>(off), d).setOnes(); };
  auto zeros = [&](std::size_t off, Eigen::Index n) { theta_.segment(static_cast<Eigen::Index>(off), n).setZero(); };
  for (const auto& b : layout_->blocks) {
    ones(b.ln1_g);
    zeros(b.ln1_b, d);
    ones(b.ln2_g);
    zeros(b.ln2_b, d);
    zeros(b.bq, d);
    zeros(b.bk, d);
    zeros(b.bv, d);
    zeros(b.bo, d);
    zeros(b.b1, layout_->hidden);
    zeros(b.b2, d);
  }
  ones(layout_->lnf_g);
  zeros(layout_->lnf_b, d);
  zeros(layout_->b_out, static_cast<Eigen::Index>(vocab_.size()));
}

ToyTransformer::~ToyTransformer() = default;

ToyTransformer::ToyTransformer(const ToyTransformer& o)
    : LanguageModel(o), spec_(o.spec_), vocab_(o.vocab_), layout_(std::make_unique<Layout>(*o.layout_)),
      theta_(o.theta_) {}

ToyTransformer& ToyTransformer::operator=(const ToyTransformer& o) {
  if (this != &o) {
    spec_ = o.spec_;
    vocab_ = o.vocab_;
    layout_ = std::make_unique<Layout>(*o.layout_);
    theta_ = o.theta_;
  }
  return *this;
}

void ToyTransformer::save(const std::string& path) const {
  Json j;
  j["format"] = "pivot-toy-model/1";
  j["spec"] = Json::parse(spec_.to_json_text());
  j["pieces"] = vocab_.pieces();
  j["bos"] = vocab_.bos();
  j["eos"] = vocab_.eos();
  j["parameters"] = std::vector<double>(theta_.data(), theta_.data() + theta_.size());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write toy model: " + path);
  out << j.dump() << '\n';
}

ToyTransformer ToyTransformer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read toy model: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ValidationError("toy model file " + path + ": " + e.what());
  }
  if (j.value("format", std::string()) != "pivot-toy-model/1") {
    throw ValidationError("toy model file " + path + ": unsupported format");
  }
  auto spec = ToyModelSpec::from_json_text(j.at("spec").dump());
  Vocabulary vocab(j.at("pieces").get<std::vector<std::string>>(), j.at("bos").get<int>(), j.at("eos").get<int>());
  ToyTransformer model(std::move(spec), std::move(vocab));
  const auto params = j.at("parameters").get<std::vector<double>>();
  if (params.size() != model.parameter_count()) {
    throw ValidationError("toy model file " + path + ": parameter count mismatch");
  }
  model.theta_ = Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
  return model;
}

std::string ToyTransformer::model_id() const {
  std::string bytes(reinterpret_cast<const char*>(theta_.data()),
                    static_cast<std::size_t>(theta_.size()) * sizeof(double));
  for (const auto& p : vocab_.pieces()) bytes += p + '\n';
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(bytes)));
  return std::string("toy-") + buf;
}

// ---------------------------------------------------------------------------
// Forward pass

ToyTransformer::Forward ToyTransformer::run_forward(std::span<const TokenId> context,
                                                    std::span<const ResidualEdit> edits, int stop_layer,
                                                    bool all_logit_rows) const {
  const auto T = static_cast<Eigen::Index>(context.size());
  if (T == 0) throw ValidationError("empty context");
  if (context.size() > spec_.context_limit) {
    throw ValidationError("context of " + std::to_string(context.size()) + " tokens exceeds limit " +
                          std::to_string(spec_.context_limit));
  }
  for (TokenId t : context) require_token(t);
  for (const auto& e : edits) require_layer(e.layer);

  const Layout& L = *layout_;
  const int d = L.width;
  const int heads = spec_.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = theta_.data();
  auto mat = [&](std::size_t off, int r, int c) { return ConstMap(p + off, r, c); };
  auto row = [&](std::size_t off, int n) { return ConstRowMap(p + off, n); };

  auto apply_edits = [&](Matrix& x, int layer) {
    for (const auto& e : edits) {
      if (e.layer != layer) continue;
      const Vector h = x.row(T - 1).transpose();
      const Vector out = e.map(h);
      if (out.size() != d) throw ValidationError("activation hook changed the state width");
      x.row(T - 1) = out.transpose();
    }
  };

  Forward f;
  f.tokens.assign(context.begin(), context.end());
  Matrix x(T, d);
  const auto tok = mat(L.tok, L.vocab, d);
  const auto pos = mat(L.pos, L.positions, d);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = tok.row(context[static_cast<std::size_t>(t)]) + pos.row(t);
  apply_edits(x, 0);
  f.layers.push_back(x);

  const int n_blocks = std::min(stop_layer, spec_.depth);
  for (int bi = 0; bi < n_blocks; ++bi) {
    const auto& B = L.blocks[static_cast<std::size_t>(bi)];
    Forward::BlockCache c;
    c.a = layer_norm(x, row(B.ln1_g, d), row(B.ln1_b, d), c.ln1);
    c.q = (c.a * mat(B.wq, d, d)).rowwise() + row(B.bq, d);
    c.k = (c.a * mat(B.wk, d, d)).rowwise() + row(B.bk, d);
    c.v = (c.a * mat(B.wv, d, d)).rowwise() + row(B.bv, d);
    c.o.resize(T, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = c.q.middleCols(h * dh, dh);
      const auto kh = c.k.middleCols(h * dh, dh);
      const auto vh = c.v.middleCols(h * dh, dh);
      Matrix s = (qh * kh.transpose()) * scale;
      Matrix a = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const auto r = s.row(i).head(i + 1);
        const double m = r.maxCoeff();
        const RowVec e = (r.array() - m).exp().matrix();
        a.row(i).head(i + 1) = e / e.sum();
      }
      c.o.middleCols(h * dh, dh) = a * vh;
      c.attn.push_back(std::move(a));
    }
    Matrix x_mid = x + ((c.o * mat(B.wo, d, d)).rowwise() + row(B.bo, d));
    c.bnorm = layer_norm(x_mid, row(B.ln2_g, d), row(B.ln2_b, d), c.ln2);
    c.u = (c.bnorm * mat(B.w1, d, L.hidden)).rowwise() + row(B.b1, L.hidden);
    c.gel = c.u.unaryExpr([](double u) { return gelu(u); });
    x = x_mid + ((c.gel * mat(B.w2, L.hidden, d)).rowwise() + row(B.b2, d));
    apply_edits(x, bi + 1);
    f.layers.push_back(x);
    f.blocks.push_back(std::move(c));
  }

  if (stop_layer >= spec_.depth) {
    const Matrix top = all_logit_rows ? x : Matrix(x.bottomRows(1));
    f.final_norm = layer_norm(top, row(L.lnf_g, d), row(L.lnf_b, d), f.lnf);
    f.logits = (f.final_norm * mat(L.w_out, d, L.vocab)).rowwise() + row(L.b_out, L.vocab);
  }
  return f;
}

VocabDistribution ToyTransformer::next_distribution(std::span<const TokenId> context,
                                                    std::span<const ResidualEdit> edits) const {
  return VocabDistribution::from_logits(last_logits(context, edits));
}

Vector ToyTransformer::last_logits(std::span<const TokenId> context, std::span<const ResidualEdit> edits) const {
  const Forward f = run_forward(context, edits, spec_.depth, false);
  return f.logits.row(0).transpose();
}

Matrix ToyTransformer::logits_all(std::span<const TokenId> context) const {
  return run_forward(context, {}, spec_.depth, true).logits;
}

HiddenState ToyTransformer::hidden_state(std::span<const TokenId> context, int layer,
                                         std::span<const ResidualEdit> edits) const {
  require_layer(layer);
  const Forward f = run_forward(context, edits, layer, false);
  return {layer, f.layers[static_cast<std::size_t>(layer)].bottomRows(1).transpose()};
}

// ---------------------------------------------------------------------------
// Backward pass

Matrix ToyTransformer::backward_head(const Forward& f, const Matrix& dlogits, Vector* grad) const {
  const Layout& L = *layout_;
  const int d = L.width;
  const double* p = theta_.data();
  const ConstMap w_out(p + L.w_out, d, L.vocab);
  const Matrix d_norm = dlogits * w_out.transpose();
  RowVec dg = RowVec::Zero(d);
  RowVec db = RowVec::Zero(d);
  if (grad) {
    MutMap(grad->data() + L.w_out, d, L.vocab) += f.final_norm.transpose() * dlogits;
    MutRowMap(grad->data() + L.b_out, L.vocab) += dlogits.colwise().sum();
  }
  Matrix dx = layer_norm_backward(d_norm, f.lnf, ConstRowMap(p + L.lnf_g, d), grad ? &dg : nullptr,
                                  grad ? &db : nullptr);
  if (grad) {
    MutRowMap(grad->data() + L.lnf_g, d) += dg;
    MutRowMap(grad->data() + L.lnf_b, d) += db;
  }
  return dx;
}

Matrix ToyTransformer::backward_blocks(const Forward& f, Matrix dx, int down_to_layer, Vector* grad) const {
  const Layout& L = *layout_;
  const int d = L.width;
  const int heads = spec_.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = theta_.data();
  auto mat = [&](std::size_t off, int r, int c) { return ConstMap(p + off, r, c); };
  auto row = [&](std::size_t off, int n) { return ConstRowMap(p + off, n); };
  auto gmat = [&](std::size_t off, int r, int c) { return MutMap(grad->data() + off, r, c); };
  auto grow = [&](std::size_t off, int n) { return MutRowMap(grad->data() + off, n); };
  const Eigen::Index T = dx.rows();

  for (int bi = static_cast<int>(f.blocks.size()) - 1; bi >= down_to_layer; --bi) {
    const auto& B = L.blocks[static_cast<std::size_t>(bi)];
    const auto& c = f.blocks[static_cast<std::size_t>(bi)];
    const Matrix& x_in = f.layers[static_cast<std::size_t>(bi)];

    // MLP: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
    const Matrix d_gel = dx * mat(B.w2, L.hidden, d).transpose();
    if (grad) {
      gmat(B.w2, L.hidden, d) += c.gel.transpose() * dx;
      grow(B.b2, d) += dx.colwise().sum();
    }
    const Matrix du = d_gel.cwiseProduct(c.u.unaryExpr([](double u) { return gelu_grad(u); }));
    const Matrix d_bnorm = du * mat(B.w1, d, L.hidden).transpose();
    if (grad) {
      gmat(B.w1, d, L.hidden) += c.bnorm.transpose() * du;
      grow(B.b1, L.hidden) += du.colwise().sum();
    }
    RowVec dg = RowVec::Zero(d);
    RowVec db = RowVec::Zero(d);
    Matrix d_mid = dx + layer_norm_backward(d_bnorm, c.ln2, row(B.ln2_g, d), grad ? &dg : nullptr,
                                            grad ? &db : nullptr);
    if (grad) {
      grow(B.ln2_g, d) += dg;
      grow(B.ln2_b, d) += db;
    }

    // Attention: x_mid = x_in + concat_h(A_h V_h) Wo + bo
    const Matrix d_o = d_mid * mat(B.wo, d, d).transpose();
    if (grad) {
      gmat(B.wo, d, d) += c.o.transpose() * d_mid;
      grow(B.bo, d) += d_mid.colwise().sum();
    }
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = c.attn[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * dh, dh);
      const Matrix da = doh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * doh;
      Matrix ds = a.cwiseProduct(da);
      const Vector rows = ds.rowwise().sum();
      ds -= a.cwiseProduct(rows.replicate(1, T));
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    const Matrix d_a = dq * mat(B.wq, d, d).transpose() + dk * mat(B.wk, d, d).transpose() +
                       dv * mat(B.wv, d, d).transpose();
    if (grad) {
      gmat(B.wq, d, d) += c.a.transpose() * dq;
      gmat(B.wk, d, d) += c.a.transpose() * dk;
      gmat(B.wv, d, d) += c.a.transpose() * dv;
      grow(B.bq, d) += dq.colwise().sum();
      grow(B.bk, d) += dk.colwise().sum();
      grow(B.bv, d) += dv.colwise().sum();
    }
    dg.setZero();
    db.setZero();
    dx = d_mid + layer_norm_backward(d_a, c.ln1, row(B.ln1_g, d), grad ? &dg : nullptr, grad ? &db : nullptr);
    if (grad) {
      grow(B.ln1_g, d) += dg;
      grow(B.ln1_b, d) += db;
    }
    (void)x_in;
  }

  if (grad && down_to_layer == 0) {
    for (Eigen::Index t = 0; t < T; ++t) {
      grow(L.tok + static_cast<std::size_t>(f.tokens[static_cast<std::size_t>(t)]) * static_cast<std::size_t>(d), d) +=
          dx.row(t);
      grow(L.pos + static_cast<std::size_t>(t) * static_cast<std::size_t>(d), d) += dx.row(t);
    }
  }
  return dx;
}

Vector ToyTransformer::grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                               std::span<const ResidualEdit> edits) const {
  require_layer(layer);
  require_token(target);
  for (const auto& e : edits) {
    if (e.layer > layer && !e.additive) {
      throw ValidationError("cannot differentiate through a non-additive hook above the target layer");
    }
  }
  const Forward f = run_forward(context, edits, spec_.depth, false);
  // d log softmax_target / d logits = onehot(target) - p
  const Vector logp = log_softmax(Vector(f.logits.row(0).transpose()));
  Matrix dlogits = -logp.array().exp().matrix().transpose();
  dlogits(0, target) += 1.0;
  const Matrix d_last = backward_head(f, dlogits, nullptr);
  Matrix d_top = Matrix::Zero(static_cast<Eigen::Index>(context.size()), spec_.width);
  d_top.bottomRows(1) = d_last;
  const Matrix d_layer = backward_blocks(f, std::move(d_top), layer, nullptr);
  return d_layer.bottomRows(1).transpose();
}

Vector ToyTransformer::parameter_gradient(std::span<const TokenId> context, const Matrix& dlogits) const {
  if (dlogits.rows() != static_cast<Eigen::Index>(context.size()) ||
      dlogits.cols() != static_cast<Eigen::Index>(vocab_.size())) {
    throw ValidationError("parameter_gradient: dlogits shape mismatch");
  }
  const Forward f = run_forward(context, {}, spec_.depth, true);
  Vector grad = Vector::Zero(theta_.size());
  Matrix d_top = backward_head(f, dlogits, &grad);
  backward_blocks(f, std::move(d_top), 0, &grad);
  return grad;
}

double ToyTransformer::cross_entropy_and_gradient(std::span<const TokenId> sequence, std::size_t loss_from,
                                                  double weight, Vector& grad) const {
  if (sequence.size() < 2 || loss_from == 0 || loss_from >= sequence.size()) {
    throw ValidationError("cross_entropy: need at least one target position");
  }
  const auto inputs = sequence.first(sequence.size() - 1);
  const Forward f = run_forward(inputs, {}, spec_.depth, true);
  const Eigen::Index T = f.logits.rows();
  Matrix dlogits = Matrix::Zero(T, f.logits.cols());
  double loss = 0.0;
  const auto n_targets = static_cast<double>(sequence.size() - loss_from);
  for (Eigen::Index t = static_cast<Eigen::Index>(loss_from) - 1; t < T; ++t) {
    const Vector logp = log_softmax(Vector(f.logits.row(t).transpose()));
    const TokenId y = sequence[static_cast<std::size_t>(t) + 1];
    loss -= logp(y);
    dlogits.row(t) = logp.array().exp().matrix().transpose();
    dlogits(t, y) -= 1.0;
  }
  dlogits *= weight / n_targets;
  Matrix d_top = backward_head(f, dlogits, &grad);
  backward_blocks(f, std::move(d_top), 0, &grad);
  return loss / n_targets;
}

void ToyTransformer::adam_step(const Vector& grad, double lr, AdamState& s, double clip_norm) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  if (s.m.size() != theta_.size()) {
    s.m = Vector::Zero(theta_.size());
    s.v = Vector::Zero(theta_.size());
    s.step = 0;
  }
  double factor = 1.0;
  if (clip_norm > 0) {
    const double n = grad.norm();
    if (n > clip_norm) factor = clip_norm / n;
  }
  ++s.step;
  s.m = b1 * s.m + (1 - b1) * factor * grad;
  s.v = b2 * s.v + (1 - b2) * (factor * grad).cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  theta_.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Training

ToyTransformer ToyTransformer::train_from_spec(const ToyModelSpec& spec, std::vector<double>* loss_log) {
  const ToyGrammar grammar(spec.corpus);
  ToyTransformer model(spec, grammar.vocabulary());
  Rng rng(derive_seed(spec.seed, "toy-corpus"));
  AdamState adam;
  const auto& tc = spec.train;
  for (int step = 0; step < tc.steps; ++step) {
    Vector grad = Vector::Zero(model.theta_.size());
    double loss = 0.0;
    for (int b = 0; b < tc.batch; ++b) {
      std::size_t start = 0;
      const auto words = grammar.sample_sequence(rng, &start);
      std::vector<TokenId> ids;
      ids.reserve(words.size());
      for (const auto& w : words) ids.push_back(*model.vocab_.find_word(w));
      loss += model.cross_entropy_and_gradient(ids, start, 1.0 / tc.batch, grad);
    }
    // linear warmup, cosine decay
    double lr = tc.learning_rate;
    if (step < tc.warmup) {
      lr *= static_cast<double>(step + 1) / tc.warmup;
    } else {
      const double prog = static_cast<double>(step - tc.warmup) / std::max(1, tc.steps - tc.warmup);
      lr *= 0.5 * (1.0 + std::cos(M_PI * prog));
    }
    model.adam_step(grad, lr, adam, tc.clip_norm);
    if (loss_log) loss_log->push_back(loss / tc.batch);
  }
  return model;
}

}  // namespace pivot
