#include "mil/models.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "mil/error.hpp"
#include "mil/rng.hpp"

namespace mil {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::multi_attention: return "multi_attention";
    case ModelKind::minet_max: return "minet_max";
    case ModelKind::minet_mean: return "minet_mean";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "multi_attention") return ModelKind::multi_attention;
  if (name == "minet_max") return ModelKind::minet_max;
  if (name == "minet_mean") return ModelKind::minet_mean;
  fail(ErrorKind::validation, "unknown model kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Model

ModelKind Model::kind() const {
  if (has_attention()) return ModelKind::multi_attention;
  return minet().pool == ad::Reduction::max ? ModelKind::minet_max : ModelKind::minet_mean;
}

std::size_t Model::input_dim() const {
  return has_attention() ? multi_attention().dims.input : minet().dims.input;
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out;
  auto lin = [&](Linear& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  auto att = [&](AttentionParams& a) {
    out.push_back(&a.V);
    out.push_back(&a.w);
  };
  if (has_attention()) {
    auto& p = multi_attention();
    lin(p.fc1);
    lin(p.fc2);
    lin(p.fc3);
    att(p.att1);
    att(p.att2);
    att(p.att3);
    lin(p.head);
  } else {
    auto& p = minet();
    for (auto& l : p.layers) lin(l);
    lin(p.head);
  }
  return out;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Initialization

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

void require_positive(std::size_t v, const char* what) {
  if (v == 0) fail(ErrorKind::validation, std::string(what) + " must be positive");
}

ad::Parameter xavier(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in,
                     std::size_t fan_out, Rng& rng) {
  const double bound = xavier_bound(fan_in, fan_out);
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return ad::Parameter(std::move(name), std::move(m));
}

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return Linear{xavier(name + ".weight", in, out, in, out, rng),
                ad::Parameter(name + ".bias", Matrix(1, out))};
}

AttentionParams make_attention(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng) {
  return AttentionParams{xavier(name + ".V", hidden, width, width, hidden, rng),
                         xavier(name + ".w", hidden, 1, hidden, 1, rng)};
}

}  // namespace

MultiAttentionParams init_multi_attention(const MultiAttentionDims& dims, std::uint64_t seed) {
  require_positive(dims.input, "input dimension D");
  require_positive(dims.hidden, "hidden width H");
  require_positive(dims.attention, "attention width L");
  Rng rng = Rng(seed).substream("init");
  MultiAttentionParams p;
  p.dims = dims;
  p.fc1 = make_linear("fc1", dims.input, dims.hidden, rng);
  p.fc2 = make_linear("fc2", dims.hidden, dims.hidden, rng);
  p.fc3 = make_linear("fc3", dims.hidden, dims.hidden, rng);
  p.att1 = make_attention("att1", dims.hidden, dims.attention, rng);
  p.att2 = make_attention("att2", dims.hidden, dims.attention, rng);
  p.att3 = make_attention("att3", dims.hidden, dims.attention, rng);
  p.head = make_linear("head", dims.hidden, 2, rng);
  return p;
}

MiNetParams init_minet(const MiNetDims& dims, ad::Reduction pool, std::uint64_t seed) {
  require_positive(dims.input, "input dimension D");
  if (dims.widths.empty()) fail(ErrorKind::validation, "MI-Net needs at least one hidden layer");
  for (auto w : dims.widths) require_positive(w, "MI-Net layer width");
  if (pool == ad::Reduction::sum) fail(ErrorKind::validation, "MI-Net pooling is max or mean");
  Rng rng = Rng(seed).substream("init");
  MiNetParams p;
  p.dims = dims;
  p.pool = pool;
  std::size_t in = dims.input;
  for (std::size_t i = 0; i < dims.widths.size(); ++i) {
    p.layers.push_back(make_linear("fc" + std::to_string(i + 1), in, dims.widths[i], rng));
    in = dims.widths[i];
  }
  p.head = make_linear("head", in, 2, rng);
  return p;
}

Model init_model(ModelKind kind, std::size_t input_dim, std::size_t hidden, std::size_t attention,
                 std::uint64_t seed) {
  switch (kind) {
    case ModelKind::multi_attention:
      return Model(init_multi_attention({input_dim, hidden, attention}, seed));
    case ModelKind::minet_max:
      return Model(init_minet({input_dim, {256, 128, 64}}, ad::Reduction::max, seed));
    case ModelKind::minet_mean:
      return Model(init_minet({input_dim, {256, 128, 64}}, ad::Reduction::mean, seed));
  }
  fail(ErrorKind::validation, "unknown model kind");
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

// Binds parameters either as trainable leaves or as read-only views.
struct Binder {
  ad::Graph& g;
  bool trainable;

  ad::Tensor operator()(const ad::Parameter& p) const {
    if (trainable) return g.parameter(const_cast<ad::Parameter&>(p), true);
    return g.view(p.value);
  }
};

void check_instances(const Matrix& x, std::size_t dim) {
  if (x.rows == 0) fail(ErrorKind::empty_bag, "bag has no instances");
  if (x.cols != dim) {
    fail(ErrorKind::dimension, "bag feature width " + std::to_string(x.cols) +
                                   " does not match model input width " + std::to_string(dim));
  }
}

ad::Tensor linear(const Binder& bind, ad::Tensor x, const Linear& l) {
  return ad::add_row(ad::matmul(x, bind(l.weight)), bind(l.bias));
}

AttentionPool attention_impl(const Binder& bind, ad::Tensor h, const AttentionParams& p) {
  const Matrix& hv = h.value();
  if (hv.rows == 0) fail(ErrorKind::empty_bag, "attention over an empty bag");
  if (hv.cols != p.width()) {
    fail(ErrorKind::dimension, "attention expects embeddings of width " + std::to_string(p.width()) +
                                   ", got " + shape_str(hv));
  }
  // scores_k = w^T tanh(V h_k^T), computed for all k at once as tanh(H V^T) w.
  ad::Tensor hidden = ad::activate(ad::matmul_nt(h, bind(p.V)), ad::Activation::tanh);
  ad::Tensor a = ad::softmax(ad::matmul(hidden, bind(p.w)));
  ad::Tensor z = ad::matmul(ad::transpose(a), h);
  return {z, a};
}

ForwardPass multi_attention_impl(ad::Graph& g, const Binder& bind, const Matrix& instances,
                                 const MultiAttentionParams& p, TrainingMode mode) {
  check_instances(instances, p.dims.input);
  ad::Tensor x = g.view(instances);
  const auto relu = ad::Activation::relu;

  ad::Tensor h1 = ad::activate(linear(bind, x, p.fc1), relu);
  AttentionPool s1 = attention_impl(bind, h1, p.att1);
  ad::Tensor h2 = ad::activate(linear(bind, h1, p.fc2), relu);
  AttentionPool s2 = attention_impl(bind, h2, p.att2);
  ad::Tensor h3 = ad::activate(linear(bind, h2, p.fc3), relu);
  AttentionPool s3 = attention_impl(bind, h3, p.att3);

  ad::Tensor z = ad::add(ad::add(s1.z, s2.z), s3.z);
  if (bind.trainable && p.dropout > 0.0) {
    if (!mode.dropout_rng) fail(ErrorKind::contract, "dropout enabled without an rng");
    z = ad::dropout(z, p.dropout, *mode.dropout_rng);
  }
  ad::Tensor prob = ad::softmax(linear(bind, z, p.head));
  return {prob, {s1.a, s2.a, s3.a}};
}

ForwardPass minet_impl(ad::Graph& g, const Binder& bind, const Matrix& instances, const MiNetParams& p) {
  check_instances(instances, p.dims.input);
  ad::Tensor h = g.view(instances);
  for (const auto& layer : p.layers) h = ad::activate(linear(bind, h, layer), p.hidden_activation);
  ad::Tensor pooled = ad::reduce(h, p.pool);
  return {ad::softmax(linear(bind, pooled, p.head)), {}};
}

}  // namespace

AttentionPool attention_pool(ad::Graph& g, ad::Tensor h, const AttentionParams& p) {
  return attention_impl(Binder{g, false}, h, p);
}

AttentionPool attention_pool(ad::Graph& g, ad::Tensor h, AttentionParams& p) {
  return attention_impl(Binder{g, true}, h, p);
}

ForwardPass forward_multi_attention(ad::Graph& g, const Matrix& instances, const MultiAttentionParams& p) {
  return multi_attention_impl(g, Binder{g, false}, instances, p, {});
}

ForwardPass forward_multi_attention(ad::Graph& g, const Matrix& instances, MultiAttentionParams& p,
                                    TrainingMode mode) {
  return multi_attention_impl(g, Binder{g, true}, instances, p, mode);
}

ForwardPass forward_minet(ad::Graph& g, const Matrix& instances, const MiNetParams& p) {
  return minet_impl(g, Binder{g, false}, instances, p);
}

ForwardPass forward_minet(ad::Graph& g, const Matrix& instances, MiNetParams& p) {
  return minet_impl(g, Binder{g, true}, instances, p);
}

ForwardPass forward(ad::Graph& g, const Matrix& instances, const Model& model) {
  if (model.has_attention()) return forward_multi_attention(g, instances, model.multi_attention());
  return forward_minet(g, instances, model.minet());
}

ForwardPass forward(ad::Graph& g, const Matrix& instances, Model& model, TrainingMode mode) {
  if (model.has_attention()) return forward_multi_attention(g, instances, model.multi_attention(), mode);
  return forward_minet(g, instances, model.minet());
}

Prediction predict(const Model& model, const Matrix& instances) {
  ad::Graph g;
  ForwardPass fp = forward(g, instances, model);
  Prediction out;
  out.prob = {fp.prob.value().data[0], fp.prob.value().data[1]};
  if (!fp.attention.empty()) {
    AttentionRecord rec;
    for (std::size_t i = 0; i < 3; ++i) rec.layers[i] = fp.attention[i].value().data;
    out.attention = std::move(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers u32 little-endian, all reals f64 little-endian):
//   "MILCKPT1"
//   kind tag (1 multi_attention, 2 minet_max, 3 minet_mean)
//   dim count n, then n dims: D,H,L for multi_attention; D,w1..wm for MI-Net
//   every parameter tensor row-major, in Model::parameters() order:
//     multi_attention: fc1.W fc1.b fc2.W fc2.b fc3.W fc3.b
//                      att1.V att1.w att2.V att2.w att3.V att3.w head.W head.b
//     MI-Net:          fc1.W fc1.b ... fcm.W fcm.b head.W head.b

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::data, path + ": truncated checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

double get_f64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) fail(ErrorKind::data, path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return std::bit_cast<double>(v);
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::data, "cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(model.kind()));
  if (model.has_attention()) {
    const auto& d = model.multi_attention().dims;
    put_u32(os, 3);
    put_u32(os, static_cast<std::uint32_t>(d.input));
    put_u32(os, static_cast<std::uint32_t>(d.hidden));
    put_u32(os, static_cast<std::uint32_t>(d.attention));
  } else {
    const auto& d = model.minet().dims;
    put_u32(os, static_cast<std::uint32_t>(1 + d.widths.size()));
    put_u32(os, static_cast<std::uint32_t>(d.input));
    for (auto w : d.widths) put_u32(os, static_cast<std::uint32_t>(w));
  }
  for (const auto* p : model.parameters())
    for (double v : p->value.data) put_f64(os, v);
  if (!os) fail(ErrorKind::data, "failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::data, "cannot open checkpoint " + where);
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != kCheckpointMagic) {
    fail(ErrorKind::data, where + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t tag = get_u32(is, where);
  const std::uint32_t ndims = get_u32(is, where);
  if (ndims == 0 || ndims > 64) fail(ErrorKind::data, where + ": implausible dimension header");
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i < ndims; ++i) dims.push_back(get_u32(is, where));

  Model model;
  switch (tag) {
    case static_cast<std::uint32_t>(ModelKind::multi_attention):
      if (ndims != 3) fail(ErrorKind::data, where + ": multi_attention header needs D,H,L");
      model = Model(init_multi_attention({dims[0], dims[1], dims[2]}, 0));
      break;
    case static_cast<std::uint32_t>(ModelKind::minet_max):
    case static_cast<std::uint32_t>(ModelKind::minet_mean): {
      MiNetDims md{dims[0], {dims.begin() + 1, dims.end()}};
      model = Model(init_minet(md, tag == 2 ? ad::Reduction::max : ad::Reduction::mean, 0));
      break;
    }
    default:
      fail(ErrorKind::data, where + ": unknown model kind tag " + std::to_string(tag));
  }
  for (auto* p : model.parameters())
    for (double& v : p->value.data) v = get_f64(is, where);
  if (is.peek() != std::char_traits<char>::eof()) fail(ErrorKind::data, where + ": trailing bytes");
  return model;
}

}  // namespace mil
