#include "dkf/closure.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace dkf {

Normalization Normalization::identity(Eigen::Index nin, Eigen::Index nout) {
    return {Vector::Zero(nin), Vector::Ones(nin), Vector::Zero(nout), Vector::Ones(nout)};
}

Vector Normalization::normalize_input(const Vector& x) const {
    return (x - in_mean).cwiseQuotient(in_std);
}
Vector Normalization::denormalize_input(const Vector& x) const { return x.cwiseProduct(in_std) + in_mean; }
Vector Normalization::normalize_output(const Vector& y) const {
    return (y - out_mean).cwiseQuotient(out_std);
}
Vector Normalization::denormalize_output(const Vector& y) const { return y.cwiseProduct(out_std) + out_mean; }

Eigen::Index MlpModel::parameter_count() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
    return n;
}

void MlpModel::validate() const {
    if (sizes.size() < 2 || W.size() != sizes.size() - 1 || b.size() != W.size())
        throw DimensionMismatch("MlpModel: layer count");
    for (std::size_t l = 0; l < W.size(); ++l)
        if (W[l].rows() != sizes[l + 1] || W[l].cols() != sizes[l] || b[l].size() != sizes[l + 1])
            throw DimensionMismatch("MlpModel: layer " + std::to_string(l) + " shape");
    if (norm.in_mean.size() != sizes.front() || norm.in_std.size() != sizes.front() ||
        norm.out_mean.size() != sizes.back() || norm.out_std.size() != sizes.back())
        throw DimensionMismatch("MlpModel: normalization shape");
}

MlpModel MlpModel::zeros(const std::vector<Eigen::Index>& sizes) {
    MlpModel m;
    m.sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        m.W.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
        m.b.push_back(Vector::Zero(sizes[l + 1]));
    }
    m.norm = Normalization::identity(sizes.front(), sizes.back());
    m.validate();
    return m;
}

MlpModel MlpModel::create(const std::vector<Eigen::Index>& sizes, Rng& rng) {
    MlpModel m = zeros(sizes);
    for (auto& w : m.W) {
        const double s = std::sqrt(2.0 / static_cast<double>(w.cols()));
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = s * rng.normal();
    }
    return m;
}

namespace {

// activations of every layer for a batch of normalized inputs
std::vector<Matrix> activations(const MlpModel& m, const Matrix& Xn) {
    std::vector<Matrix> A{Xn};
    for (std::size_t l = 0; l < m.layers(); ++l) {
        Matrix z = (m.W[l] * A.back()).colwise() + m.b[l];
        if (l + 1 < m.layers()) z = z.array().tanh().matrix();
        A.push_back(std::move(z));
    }
    return A;
}

}  // namespace

Vector forward(const MlpModel& m, const Vector& x) {
    require_dims(x.size() == m.sizes.front(), "forward: input size");
    Matrix xn = m.norm.normalize_input(x);
    return m.norm.denormalize_output(activations(m, xn).back().col(0));
}

Matrix input_jacobian(const MlpModel& m, const Vector& x) {
    require_dims(x.size() == m.sizes.front(), "input_jacobian: input size");
    const auto A = activations(m, m.norm.normalize_input(x));
    // J = diag(out_std) W_L D_{L-1} W_{L-1} ... D_1 W_1 diag(1/in_std)
    Matrix J = m.norm.out_std.asDiagonal() * m.W.back();
    for (std::size_t l = m.layers() - 1; l-- > 0;) {
        Vector d = 1.0 - A[l + 1].col(0).array().square();
        J = J * d.asDiagonal() * m.W[l];
    }
    return J * m.norm.in_std.cwiseInverse().asDiagonal();
}

double mse_loss(const MlpModel& m, const Matrix& Xn, const Matrix& Yn, MlpGradient* grad) {
    require_dims(Xn.rows() == m.sizes.front() && Yn.rows() == m.sizes.back() && Xn.cols() == Yn.cols(),
                 "mse_loss: batch shape");
    const auto A = activations(m, Xn);
    const Matrix E = A.back() - Yn;
    const double count = static_cast<double>(E.size());
    const double loss = E.squaredNorm() / count;
    if (grad) {
        grad->dW.resize(m.layers());
        grad->db.resize(m.layers());
        Matrix dz = (2.0 / count) * E;
        for (std::size_t l = m.layers(); l-- > 0;) {
            grad->dW[l] = dz * A[l].transpose();
            grad->db[l] = dz.rowwise().sum();
            if (l > 0) dz = (m.W[l].transpose() * dz).cwiseProduct((1.0 - A[l].array().square()).matrix());
        }
    }
    return loss;
}

Vector flatten_parameters(const MlpModel& m) {
    Vector t(m.parameter_count());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        t.segment(o, m.W[l].size()) = vec_view(m.W[l]);
        o += m.W[l].size();
        t.segment(o, m.b[l].size()) = m.b[l];
        o += m.b[l].size();
    }
    return t;
}

void set_parameters(MlpModel& m, const Vector& theta) {
    require_dims(theta.size() == m.parameter_count(), "set_parameters: length");
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        m.W[l] = unvec(theta.segment(o, m.W[l].size()), m.W[l].rows(), m.W[l].cols());
        o += m.W[l].size();
        m.b[l] = theta.segment(o, m.b[l].size());
        o += m.b[l].size();
    }
}

void Dataset::validate() const {
    if (inputs.empty() || inputs.size() != targets.size()) throw DimensionMismatch("Dataset: empty or ragged");
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i].size() != inputs[0].size() || targets[i].size() != targets[0].size())
            throw DimensionMismatch("Dataset: inconsistent sample dimensions");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 0 || validation_fraction < 0.0 ||
        validation_fraction >= 1.0)
        throw std::invalid_argument("TrainConfig: invalid settings");
}

namespace {

Matrix stack(const std::vector<Vector>& v, const std::vector<std::size_t>& idx) {
    Matrix out(v.front().size(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = v[idx[i]];
    return out;
}

void zscore(const Matrix& X, Vector& mean, Vector& sd) {
    mean = X.rowwise().mean();
    sd = ((X.colwise() - mean).array().square().rowwise().mean()).sqrt();
    for (Eigen::Index i = 0; i < sd.size(); ++i)
        if (!(sd(i) > 1e-12)) sd(i) = 1.0;
}

Matrix normalize_cols(const Matrix& X, const Vector& mean, const Vector& sd) {
    return (X.colwise() - mean).array().colwise() / sd.array();
}

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

TrainResult train(const MlpModel& init, const Dataset& data, const TrainConfig& cfg) {
    init.validate();
    data.validate();
    cfg.validate();
    require_dims(data.inputs[0].size() == init.sizes.front() && data.targets[0].size() == init.sizes.back(),
                 "train: dataset dimensions vs model");

    Rng rng(cfg.seed);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng split = rng.derive("split");
    shuffle(idx, split);
    const auto nval = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(idx.size())));
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
    std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());

    TrainResult res;
    res.model = init;
    res.train_count = tr.size();
    res.val_count = val.size();
    MlpModel& m = res.model;
    const Matrix Xtr = stack(data.inputs, tr), Ytr = stack(data.targets, tr);
    if (cfg.normalize) {
        zscore(Xtr, m.norm.in_mean, m.norm.in_std);
        zscore(Ytr, m.norm.out_mean, m.norm.out_std);
    }
    const Matrix Xn = normalize_cols(Xtr, m.norm.in_mean, m.norm.in_std);
    const Matrix Yn = normalize_cols(Ytr, m.norm.out_mean, m.norm.out_std);
    Matrix Xv, Yv;
    if (!val.empty()) {
        Xv = normalize_cols(stack(data.inputs, val), m.norm.in_mean, m.norm.in_std);
        Yv = normalize_cols(stack(data.targets, val), m.norm.out_mean, m.norm.out_std);
    }

    Vector theta = flatten_parameters(m);
    Vector mom = Vector::Zero(theta.size()), vel = Vector::Zero(theta.size());
    Vector best = theta;
    double best_loss = std::numeric_limits<double>::infinity();
    const auto n = static_cast<Eigen::Index>(tr.size());
    const Eigen::Index bs = cfg.batch_size > 0 ? std::min<Eigen::Index>(cfg.batch_size, n) : n;
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), 0);
    Rng batches = rng.derive("batches");
    long step = 0;
    MlpGradient g;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (bs < n) shuffle(order, batches);
        for (Eigen::Index s = 0; s < n; s += bs) {
            const Eigen::Index len = std::min(bs, n - s);
            Matrix xb(Xn.rows(), len), yb(Yn.rows(), len);
            for (Eigen::Index i = 0; i < len; ++i) {
                xb.col(i) = Xn.col(static_cast<Eigen::Index>(order[static_cast<std::size_t>(s + i)]));
                yb.col(i) = Yn.col(static_cast<Eigen::Index>(order[static_cast<std::size_t>(s + i)]));
            }
            const double l = mse_loss(m, xb, yb, &g);
            if (!std::isfinite(l)) throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch));
            MlpModel gm = m;
            gm.W = g.dW;
            gm.b = g.db;
            const Vector gt = flatten_parameters(gm);
            ++step;
            mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * gt;
            vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * gt.cwiseProduct(gt);
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            theta -= cfg.learning_rate * ((mom / c1).array() / ((vel / c2).array().sqrt() + cfg.adam_eps)).matrix();
            set_parameters(m, theta);
        }
        const double lt = mse_loss(m, Xn, Yn);
        if (!std::isfinite(lt)) throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch));
        const double lv = val.empty() ? lt : mse_loss(m, Xv, Yv);
        res.train_loss.push_back(lt);
        res.val_loss.push_back(lv);
        if (lv < best_loss) {
            best_loss = lv;
            best = theta;
            res.best_epoch = epoch;
        }
    }
    set_parameters(m, best);
    return res;
}

Vector predict_diffusivity(const MlpModel& m, const Vector& v) {
    require_dims(m.sizes.front() == 1 && m.sizes.back() == 1, "predict_diffusivity: model must be scalar");
    Vector d(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) d(i) = std::max(forward(m, Vector::Constant(1, v(i)))(0), 1e-8);
    return d;
}

LinearizedStep operator_from_closure(const MlpModel& m, const Vector& v_state, const PdeGeometry& g,
                                     DiffusionForm form) {
    return linearized_operator(g, predict_diffusivity(m, v_state), v_state, form);
}

namespace {

constexpr char kMagic[8] = {'D', 'K', 'F', 'M', 'L', 'P', 0, 0};
constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        char* p = reinterpret_cast<char*>(&v);
        std::reverse(p, p + sizeof v);
    }
    return v;
}

template <class T>
void put(std::ostream& os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64(std::ostream& os, double d) { put(os, std::bit_cast<std::uint64_t>(d)); }

template <class T>
T get(std::istream& is) {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("checkpoint truncated");
    return to_little(v);
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

void put_values(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}

void get_values(std::istream& is, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
}

void get_values(std::istream& is, Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = get_f64(is);
}

}  // namespace

void save_checkpoint(std::ostream& os, const MlpModel& m) {
    m.validate();
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.activation));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.sizes.size()));
    for (auto s : m.sizes) put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    put_values(os, m.norm.in_mean);
    put_values(os, m.norm.in_std);
    put_values(os, m.norm.out_mean);
    put_values(os, m.norm.out_std);
    for (std::size_t l = 0; l < m.layers(); ++l) {
        put_values(os, m.W[l]);
        put_values(os, m.b[l]);
    }
}

MlpModel load_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw CheckpointError("not a dkf MLP checkpoint");
    if (get<std::uint32_t>(is) != kVersion) throw CheckpointError("unsupported checkpoint version");
    const auto act = get<std::uint32_t>(is);
    if (act != static_cast<std::uint32_t>(Activation::tanh)) throw CheckpointError("unknown activation id");
    const auto count = get<std::uint32_t>(is);
    if (count < 2 || count > 64) throw CheckpointError("bad layer count");
    std::vector<Eigen::Index> sizes;
    for (std::uint32_t i = 0; i < count; ++i) sizes.push_back(get<std::uint32_t>(is));
    MlpModel m = MlpModel::zeros(sizes);
    get_values(is, m.norm.in_mean);
    get_values(is, m.norm.in_std);
    get_values(is, m.norm.out_mean);
    get_values(is, m.norm.out_std);
    for (std::size_t l = 0; l < m.layers(); ++l) {
        get_values(is, m.W[l]);
        get_values(is, m.b[l]);
    }
    return m;
}

void save_checkpoint(const std::string& path, const MlpModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + path);
    save_checkpoint(os, m);
}

MlpModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot read " + path);
    return load_checkpoint(is);
}

}  // namespace dkf
