#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace slidekit {

struct LinearModel {
  Eigen::MatrixXd weights;  // C x D
  Eigen::VectorXd bias;     // C

  int classes() const { return static_cast<int>(weights.rows()); }
  Eigen::MatrixXd logits(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
  std::vector<int> predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// One bias-corrected Adam update in place. Throws on a non-finite gradient.
void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
               double lr, const AdamParams& p = {});

// 0.5 * base_lr * (1 + cos(pi * step / total_steps))
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

// Mean softmax cross-entropy over rows; fills gradients when non-null.
double softmax_cross_entropy(const LinearModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                             std::span<const int> labels, Eigen::MatrixXd* grad_w = nullptr,
                             Eigen::VectorXd* grad_b = nullptr);

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 128;
  int epochs = 10;
  AdamParams adam;
  double weight_decay = 0.0;  // decoupled, applied to weights only
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // full-data loss after each epoch
};

// Zero-initialized linear softmax classifier trained with Adam on seeded
// per-epoch shuffles and a cosine schedule over all steps.
LinearModel train_probe(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels, const TrainConfig& cfg,
                        TrainReport* report = nullptr);

// ---------------------------------------------------------------------------
// Metrics

// counts(true, predicted)
Eigen::MatrixXi confusion_matrix(std::span<const int> preds, std::span<const int> labels, int classes);

// Mean recall over the classes present in labels.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels);
double accuracy(std::span<const int> preds, std::span<const int> labels);

struct ClassF1 {
  std::vector<double> f1;     // index = class id
  std::vector<bool> defined;  // false when the class has neither positives nor predictions
};

ClassF1 per_class_f1(std::span<const int> preds, std::span<const int> labels);
// Mean F1 over defined classes.
double macro_f1(std::span<const int> preds, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Hyperparameter selection

struct SweepResult {
  LinearModel model;
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double validation_balanced_accuracy = 0.0;
  struct Trial {
    double learning_rate;
    double weight_decay;
    double validation_balanced_accuracy;
  };
  std::vector<Trial> trials;
};

// Seeded train/validation split; every (lr, wd) pair is trained on the train
// part and the best validation balanced accuracy wins (grid order breaks ties).
SweepResult sweep_probe(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels,
                        std::span<const double> learning_rates, std::span<const double> weight_decays,
                        const TrainConfig& base, double validation_fraction = 0.1);

// Seeded split of row indices into (first, second) with round(n * fraction)
// rows in the second part.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n, double fraction,
                                                                         std::uint64_t seed);

// Labels CSV: header then "row,label" lines.
std::vector<std::pair<std::size_t, int>> load_labels_csv(const std::filesystem::path& path);

}  // namespace slidekit
