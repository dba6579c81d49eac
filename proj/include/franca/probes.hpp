#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "franca/heads.hpp"
#include "franca/params.hpp"
#include "franca/tensor.hpp"

namespace franca {

// ---- k-NN -----------------------------------------------------------------

// Cosine k-NN on the first `width` coordinates. Neighbors are ranked by
// similarity, then by train index; the vote goes to the most frequent label,
// ties to the smallest label.
std::vector<int> knn_predict(const Tensor& train, std::span<const int> train_labels, const Tensor& test, std::size_t k,
                             std::size_t width);

struct KnnResult {
    std::size_t width = 0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

std::vector<KnnResult> knn_classify(const Tensor& train, std::span<const int> train_labels, const Tensor& test,
                                    std::span<const int> test_labels, std::size_t k,
                                    std::span<const std::size_t> widths);

// ---- cluster-position entropy ----------------------------------------------

struct EntropyReport {
    std::vector<double> entropy;      // per cluster; NaN where the cluster is empty
    std::vector<std::size_t> counts;  // assigned patches per cluster
    double mean = 0.0;                // over non-empty clusters
    std::size_t active = 0;
};

// `assignments` holds one cluster id per patch, images concatenated, each image
// contributing `positions` patches in raster order.
EntropyReport cluster_position_entropy(std::span<const int> assignments, std::size_t positions, std::size_t clusters);

// Argmax prototype of the level's patch head for every row of patches [P, d].
std::vector<int> cluster_assignments(const HeadBankConfig& bank, const ParamStore& params, std::size_t level,
                                     const Tensor& patches);

// ---- k-means / overclustering ----------------------------------------------

struct KMeansResult {
    std::vector<int> labels;
    std::vector<double> centroids;  // K x D row-major
    double inertia = 0.0;
    std::size_t iterations = 0;
};

// k-means++ seeding, then Lloyd until 300 iterations or relative inertia
// change below 1e-6.
KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 300,
                    double tolerance = 1e-6);

// Cluster -> class map: optimal one-to-one matching on intersections, then
// every unmatched cluster goes to its largest-overlap class.
std::vector<int> match_clusters(std::span<const int> clusters, std::span<const int> classes, std::size_t k,
                                std::size_t num_classes);

// Mean IoU over classes present in `classes` or in the prediction.
double mean_iou(std::span<const int> predicted, std::span<const int> classes, std::size_t num_classes);

struct OverclusterResult {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_seed;
    std::size_t points = 0;
};

OverclusterResult overcluster_miou(const Tensor& features, std::span<const int> classes, std::size_t k,
                                   std::span<const std::uint64_t> seeds);

// ---- PCA --------------------------------------------------------------------

struct Principal {
    std::vector<double> components;  // k x D row-major, unit rows, descending variance
    std::vector<double> variances;
    std::vector<double> mean;
};

// Top-k principal axes of rows of x [N, D]. Each axis is signed so that its
// largest-magnitude coordinate is positive.
Principal principal_components(const Tensor& x, std::size_t k);

struct PcaImage {
    Tensor rgb;                       // [3, rows, cols] in [0, 1]
    std::vector<std::uint8_t> foreground;
    bool degenerate = false;          // fewer than three usable components somewhere
};

// First principal component thresholded at zero gives the foreground (the
// smaller side is taken as positive); a second PCA over foreground patches
// gives three channels, min-max scaled. Background is black; missing
// channels are 0.5.
PcaImage pca_patch_rgb(const Tensor& patches, std::size_t rows, std::size_t cols);
// Nearest-neighbour upscaling by `scale` before writing a P6 file.
void write_pca_ppm(const std::filesystem::path& path, const PcaImage& img, std::size_t scale = 8);

// ---- linear probe -------------------------------------------------------------

struct LinearProbeResult {
    double accuracy = 0.0;
    double best_lr = 0.0;
    std::vector<std::pair<double, double>> per_lr;  // (lr, accuracy)
    std::size_t count = 0;
};

inline const std::vector<double> kProbeLearningRates{0.005, 0.01, 0.02, 0.05, 0.1};

// Affine layer + softmax cross-entropy trained full-batch with Adam from zero,
// best test accuracy over `lrs`.
LinearProbeResult linear_probe(const Tensor& train, std::span<const int> train_labels, const Tensor& test,
                               std::span<const int> test_labels, std::size_t epochs,
                               std::span<const double> lrs = kProbeLearningRates);

// ---- report -------------------------------------------------------------------

struct ProbeReport {
    struct Metric {
        std::string key;
        double value = 0.0;
        std::size_t count = 0;
    };
    std::string probe;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> params;
    std::vector<std::string> feature_files;
    std::vector<Metric> metrics;

    void write_csv(std::ostream& os) const;
    static ProbeReport parse_csv(const std::string& text);
};

}  // namespace franca
