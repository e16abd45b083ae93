#include "mesh/model.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mesh/random.hpp"

namespace mesh {

std::string to_string(Group g) {
  switch (g) {
    case Group::encoder:
      return "encoder";
    case Group::bottleneck:
      return "bottleneck";
    case Group::classifier:
      return "classifier";
  }
  return "?";
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ParameterError("unknown activation '" + s + "'");
}

std::vector<int> ModelParams::dims() const {
  std::vector<int> d;
  d.push_back(static_cast<int>(input_dim()));
  for (const auto& layer : encoder) d.push_back(static_cast<int>(layer.out_dim()));
  d.push_back(static_cast<int>(bottleneck.out_dim()));
  d.push_back(static_cast<int>(classifier.out_dim()));
  return d;
}

Gradients& Gradients::accumulate(const Gradients& other) {
  if (encoder.size() != other.encoder.size() ||
      bottleneck.has_value() != other.bottleneck.has_value() ||
      classifier.has_value() != other.classifier.has_value()) {
    throw ContractError("Gradients::accumulate: mismatched gradient trees");
  }
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    encoder[i].weight += other.encoder[i].weight;
    encoder[i].bias += other.encoder[i].bias;
  }
  if (bottleneck) {
    bottleneck->weight += other.bottleneck->weight;
    bottleneck->bias += other.bottleneck->bias;
  }
  if (classifier) {
    classifier->weight += other.classifier->weight;
    classifier->bias += other.classifier->bias;
  }
  return *this;
}

namespace {

DenseLayer glorot_layer(int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer{Matrix(in, out), Vector::Zero(out)};
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = rng.uniform(-limit, limit);
  }
  return layer;
}

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix z = x * layer.weight;
  z.rowwise() += layer.bias.transpose();
  return z;
}

Matrix activate(const Matrix& z, Activation a) {
  if (a == Activation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

// d activation / d pre-activation, elementwise.
Matrix activation_slope(const Matrix& z, Activation a) {
  if (a == Activation::tanh) {
    const Eigen::ArrayXXd t = z.array().tanh();
    return (1.0 - t * t).matrix();
  }
  return (z.array() > 0.0).cast<double>().matrix();
}

void accumulate_layer(const Matrix& in, const Matrix& dout, LayerGradient& grad) {
  grad.weight = in.transpose() * dout;
  grad.bias = dout.colwise().sum().transpose();
}

}  // namespace

ModelParams init_model(std::span<const int> dims, std::uint64_t seed, Activation activation) {
  if (dims.size() < 4) {
    throw ParameterError("init_model: need {input, hidden..., bottleneck, classes}, got " +
                         std::to_string(dims.size()) + " sizes");
  }
  for (int d : dims) {
    if (d <= 0) throw ParameterError("init_model: non-positive layer size " + std::to_string(d));
  }
  Rng rng(seed);
  ModelParams params;
  params.activation = activation;
  const std::size_t n = dims.size();
  for (std::size_t i = 0; i + 3 < n; ++i) params.encoder.push_back(glorot_layer(dims[i], dims[i + 1], rng));
  params.bottleneck = glorot_layer(dims[n - 3], dims[n - 2], rng);
  params.classifier = glorot_layer(dims[n - 2], dims[n - 1], rng);
  return params;
}

ForwardResult forward(const ModelParams& params, const Matrix& x, double dropout_rate,
                      bool dropout_on, std::uint64_t seed) {
  if (x.cols() != params.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(params.input_dim()));
  }
  if (dropout_on && !(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ParameterError("forward: dropout rate must lie in [0, 1)");
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.dims = params.dims();
  cache.input = x;

  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - dropout_rate);
  cache.outputs.reserve(params.encoder.size());
  const Matrix* h = &cache.input;
  for (const auto& layer : params.encoder) {
    cache.pre_activations.push_back(affine(*h, layer));
    Matrix out = activate(cache.pre_activations.back(), params.activation);
    if (dropout_on) {
      Matrix mask(out.rows(), out.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.uniform() < dropout_rate ? 0.0 : keep_scale;
      }
      out.array() *= mask.array();
      cache.masks.push_back(std::move(mask));
    }
    cache.outputs.push_back(std::move(out));
    h = &cache.outputs.back();
  }
  cache.features = affine(*h, params.bottleneck);
  cache.logits = affine(cache.features, params.classifier);
  result.logits = cache.logits;
  return result;
}

Matrix extract_features(const ModelParams& params, const Matrix& x) {
  return forward(params, x).cache.features;
}

Matrix predict_proba(const ModelParams& params, const Matrix& x) {
  return linalg::row_softmax(forward(params, x).logits);
}

namespace {

Gradients backward_impl(const ModelParams& params, const ForwardCache& cache,
                        const Matrix& dlogits, bool with_params) {
  if (cache.dims != params.dims() || cache.outputs.size() != params.encoder.size()) {
    throw ContractError("backward: cache was produced by a different architecture");
  }
  if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols()) {
    throw ContractError("backward: dlogits " + linalg::shape_str(dlogits.rows(), dlogits.cols()) +
                        " does not match cached logits " +
                        linalg::shape_str(cache.logits.rows(), cache.logits.cols()));
  }
  const bool dropout = !cache.masks.empty();
  Gradients grads;

  if (with_params && !params.is_frozen(Group::classifier)) {
    grads.classifier.emplace();
    accumulate_layer(cache.features, dlogits, *grads.classifier);
  }
  const Matrix dfeatures = dlogits * params.classifier.weight.transpose();

  const Matrix& encoded = cache.outputs.empty() ? cache.input : cache.outputs.back();
  if (with_params && !params.is_frozen(Group::bottleneck)) {
    grads.bottleneck.emplace();
    accumulate_layer(encoded, dfeatures, *grads.bottleneck);
  }
  Matrix dh = dfeatures * params.bottleneck.weight.transpose();

  const bool train_encoder = with_params && !params.is_frozen(Group::encoder);
  if (train_encoder) grads.encoder.resize(params.encoder.size());
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    if (dropout) dh.array() *= cache.masks[l].array();
    const Matrix dz = (dh.array() * activation_slope(cache.pre_activations[l], params.activation).array()).matrix();
    const Matrix& in = l == 0 ? cache.input : cache.outputs[l - 1];
    if (train_encoder) accumulate_layer(in, dz, grads.encoder[l]);
    dh = dz * params.encoder[l].weight.transpose();
  }
  grads.input_grad = std::move(dh);
  return grads;
}

}  // namespace

Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits) {
  return backward_impl(params, cache, dlogits, true);
}

Matrix input_gradient(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits) {
  return backward_impl(params, cache, dlogits, false).input_grad;
}

Matrix mc_dropout_predict(const ModelParams& params, const Matrix& x, int passes,
                          double dropout_rate, std::uint64_t seed) {
  if (passes < 1) throw ParameterError("mc_dropout_predict: passes must be >= 1");
  Matrix mean = Matrix::Zero(x.rows(), params.num_classes());
  for (int pass = 0; pass < passes; ++pass) {
    const auto run = forward(params, x, dropout_rate, true, mix_seed(seed, static_cast<std::uint64_t>(pass)));
    mean += linalg::row_softmax(run.logits);
  }
  mean /= static_cast<double>(passes);
  // Renormalize so rows sum to one up to a single rounding.
  for (Eigen::Index i = 0; i < mean.rows(); ++i) mean.row(i) /= mean.row(i).sum();
  return mean;
}

// Checkpoint format (text, version 1):
//   mesh-checkpoint 1
//   activation <tanh|relu>
//   dims <n> <d0> ... <dn-1>
//   frozen <count> <group>...
//   layer <name> <in> <out>      followed by `in` weight rows and one bias row
// Values use the shortest representation that round-trips exactly.

namespace {

void write_row(std::ostream& os, const double* values, Eigen::Index n) {
  char buf[64];
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), values[i]);
    if (i) os << ' ';
    os.write(buf, end - buf);
  }
  os << '\n';
}

void write_layer(std::ostream& os, const std::string& name, const DenseLayer& layer) {
  os << "layer " << name << ' ' << layer.in_dim() << ' ' << layer.out_dim() << '\n';
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    write_row(os, layer.weight.row(r).data(), layer.weight.cols());
  }
  write_row(os, layer.bias.data(), layer.bias.size());
}

class CheckpointReader {
 public:
  CheckpointReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::istringstream next_line() {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file");
    ++line_no_;
    return std::istringstream(line);
  }

  void expect(std::istringstream& ls, const std::string& keyword) {
    std::string word;
    if (!(ls >> word) || word != keyword) fail("expected '" + keyword + "'");
  }

  std::vector<double> numbers(Eigen::Index count) {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file");
    ++line_no_;
    std::vector<double> out;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("malformed number");
      out.push_back(v);
      p = next;
    }
    if (static_cast<Eigen::Index>(out.size()) != count) {
      fail("expected " + std::to_string(count) + " values, got " + std::to_string(out.size()));
    }
    return out;
  }

  DenseLayer layer(const std::string& name, int in, int out) {
    auto ls = next_line();
    expect(ls, "layer");
    std::string got;
    Eigen::Index rows = 0, cols = 0;
    ls >> got >> rows >> cols;
    if (got != name || rows != in || cols != out) fail("layer header mismatch for " + name);
    DenseLayer layer{Matrix(rows, cols), Vector(cols)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto row = numbers(cols);
      std::copy(row.begin(), row.end(), layer.weight.row(r).data());
    }
    const auto bias = numbers(cols);
    std::copy(bias.begin(), bias.end(), layer.bias.data());
    return layer;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, line_no_, what); }

 private:
  std::istream& in_;
  std::string path_;
  std::size_t line_no_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "mesh-checkpoint 1\n";
  os << "activation " << to_string(params.activation) << '\n';
  const auto dims = params.dims();
  os << "dims " << dims.size();
  for (int d : dims) os << ' ' << d;
  os << '\n';
  os << "frozen " << params.frozen.size();
  for (Group g : params.frozen) os << ' ' << to_string(g);
  os << '\n';
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    write_layer(os, "encoder" + std::to_string(i), params.encoder[i]);
  }
  write_layer(os, "bottleneck", params.bottleneck);
  write_layer(os, "classifier", params.classifier);
  if (!os) throw Error("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  CheckpointReader reader(in, path.string());

  auto header = reader.next_line();
  reader.expect(header, "mesh-checkpoint");
  int version = 0;
  header >> version;
  if (version != 1) reader.fail("unsupported checkpoint version " + std::to_string(version));

  ModelParams params;
  auto act = reader.next_line();
  reader.expect(act, "activation");
  std::string act_name;
  act >> act_name;
  params.activation = parse_activation(act_name);

  auto dims_line = reader.next_line();
  reader.expect(dims_line, "dims");
  std::size_t count = 0;
  dims_line >> count;
  std::vector<int> dims(count);
  for (auto& d : dims) {
    if (!(dims_line >> d) || d <= 0) reader.fail("bad dims");
  }
  if (dims.size() < 4) reader.fail("need at least four layer sizes");

  auto frozen_line = reader.next_line();
  reader.expect(frozen_line, "frozen");
  std::size_t n_frozen = 0;
  frozen_line >> n_frozen;
  for (std::size_t i = 0; i < n_frozen; ++i) {
    std::string g;
    frozen_line >> g;
    if (g == "encoder") params.frozen.insert(Group::encoder);
    else if (g == "bottleneck") params.frozen.insert(Group::bottleneck);
    else if (g == "classifier") params.frozen.insert(Group::classifier);
    else reader.fail("unknown group '" + g + "'");
  }

  const std::size_t n = dims.size();
  for (std::size_t i = 0; i + 3 < n; ++i) {
    params.encoder.push_back(reader.layer("encoder" + std::to_string(i), dims[i], dims[i + 1]));
  }
  params.bottleneck = reader.layer("bottleneck", dims[n - 3], dims[n - 2]);
  params.classifier = reader.layer("classifier", dims[n - 2], dims[n - 1]);
  return params;
}

}  // namespace mesh
