#pragma once

#include "dkf/numkit.hpp"
#include "dkf/reaction_diffusion.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dkf {

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Activation : std::uint32_t { tanh = 1 };

// z-score statistics; forward() maps raw inputs to raw outputs through them
struct Normalization {
    Vector in_mean, in_std, out_mean, out_std;

    static Normalization identity(Eigen::Index nin, Eigen::Index nout);
    Vector normalize_input(const Vector& x) const;
    Vector normalize_output(const Vector& y) const;
    Vector denormalize_output(const Vector& y) const;
    Vector denormalize_input(const Vector& x) const;
};

struct MlpModel {
    std::vector<Eigen::Index> sizes;  // input, hidden..., output
    std::vector<Matrix> W;            // W[l] is sizes[l+1] x sizes[l]
    std::vector<Vector> b;
    Activation activation = Activation::tanh;
    Normalization norm;

    std::size_t layers() const { return W.size(); }
    Eigen::Index parameter_count() const;
    void validate() const;

    // He-style scaled normal weights, zero biases
    static MlpModel create(const std::vector<Eigen::Index>& sizes, Rng& rng);
    static MlpModel zeros(const std::vector<Eigen::Index>& sizes);
};

Vector forward(const MlpModel& m, const Vector& x);
// d output / d input of the raw (de-normalized) map
Matrix input_jacobian(const MlpModel& m, const Vector& x);

struct MlpGradient {
    std::vector<Matrix> dW;
    std::vector<Vector> db;
};

// mean squared error over all entries of normalized targets; columns are samples
double mse_loss(const MlpModel& m, const Matrix& Xn, const Matrix& Yn, MlpGradient* grad = nullptr);

Vector flatten_parameters(const MlpModel& m);
void set_parameters(MlpModel& m, const Vector& theta);

struct Dataset {
    std::vector<Vector> inputs;
    std::vector<Vector> targets;
    std::string provenance;

    void validate() const;
    std::size_t size() const { return inputs.size(); }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 5000;
    int batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    bool normalize = true;

    void validate() const;
};

struct TrainResult {
    MlpModel model;  // parameters at the best validation loss
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;
    std::size_t train_count = 0, val_count = 0;
};

TrainResult train(const MlpModel& init, const Dataset& data, const TrainConfig& cfg);

Vector predict_diffusivity(const MlpModel& m, const Vector& v);
LinearizedStep operator_from_closure(const MlpModel& m, const Vector& v_state, const PdeGeometry& g,
                                     DiffusionForm form = DiffusionForm::pointwise);

void save_checkpoint(std::ostream& os, const MlpModel& m);
MlpModel load_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const MlpModel& m);
MlpModel load_checkpoint(const std::string& path);

}  // namespace dkf
