#include "franca/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "franca/hungarian.hpp"
#include "franca/image_io.hpp"
#include "franca/ops.hpp"
#include "franca/optim.hpp"
#include "franca/random.hpp"

namespace franca {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix prefix_normalized(const Tensor& x, std::size_t width) {
    if (x.ndim() != 2) throw ShapeError("expected a [N, D] feature matrix, got " + shape_str(x.shape()));
    if (width == 0 || width > x.cols())
        throw std::invalid_argument("slice width " + std::to_string(width) + " outside [1, " + std::to_string(x.cols()) + "]");
    RowMatrix m(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < width; ++j) ss += x[r * x.cols() + j] * x[r * x.cols() + j];
        const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
        for (std::size_t j = 0; j < width; ++j) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = x[r * x.cols() + j] * inv;
    }
    return m;
}

RowMatrix as_matrix(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("expected a [N, D] matrix, got " + shape_str(x.shape()));
    return Eigen::Map<const RowMatrix>(x.data().data(), static_cast<Eigen::Index>(x.rows()),
                                       static_cast<Eigen::Index>(x.cols()));
}

int argmax_row(std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

// ---- k-NN -----------------------------------------------------------------

std::vector<int> knn_predict(const Tensor& train, std::span<const int> train_labels, const Tensor& test, std::size_t k,
                             std::size_t width) {
    if (train.ndim() != 2 || train.rows() == 0) throw std::invalid_argument("knn: empty train set");
    if (train_labels.size() != train.rows()) throw std::invalid_argument("knn: one label per train row required");
    if (k == 0 || k > train.rows()) throw std::invalid_argument("knn: k must lie in [1, N]");
    if (test.ndim() != 2 || test.cols() != train.cols()) throw ShapeError("knn: train and test widths differ");
    const RowMatrix a = prefix_normalized(train, width), q = prefix_normalized(test, width);
    const RowMatrix sims = q * a.transpose();
    const std::size_t n = train.rows();
    std::vector<int> out(test.rows());
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < test.rows(); ++i) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        const double* s = sims.data() + i * n;
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t x, std::size_t y) { return s[x] > s[y] || (s[x] == s[y] && x < y); });
        std::map<int, std::size_t> votes;
        for (std::size_t j = 0; j < k; ++j) ++votes[train_labels[order[j]]];
        int best = votes.begin()->first;
        std::size_t best_count = 0;
        for (const auto& [label, count] : votes)
            if (count > best_count) {
                best = label;
                best_count = count;
            }
        out[i] = best;
    }
    return out;
}

std::vector<KnnResult> knn_classify(const Tensor& train, std::span<const int> train_labels, const Tensor& test,
                                    std::span<const int> test_labels, std::size_t k,
                                    std::span<const std::size_t> widths) {
    if (test_labels.size() != test.rows()) throw std::invalid_argument("knn: one label per test row required");
    if (test.rows() == 0) throw std::invalid_argument("knn: empty test set");
    std::vector<KnnResult> out;
    for (auto w : widths) {
        const auto pred = knn_predict(train, train_labels, test, k, w);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i];
        out.push_back({w, static_cast<double>(correct) / static_cast<double>(pred.size()), pred.size()});
    }
    return out;
}

// ---- entropy --------------------------------------------------------------

EntropyReport cluster_position_entropy(std::span<const int> assignments, std::size_t positions, std::size_t clusters) {
    if (positions == 0 || assignments.size() % positions != 0)
        throw std::invalid_argument("cluster_position_entropy: assignments are not whole images of " +
                                    std::to_string(positions) + " patches");
    std::vector<std::size_t> hist(clusters * positions, 0);
    EntropyReport rep;
    rep.counts.assign(clusters, 0);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const int c = assignments[i];
        if (c < 0 || static_cast<std::size_t>(c) >= clusters) throw std::invalid_argument("cluster id out of range");
        ++hist[static_cast<std::size_t>(c) * positions + i % positions];
        ++rep.counts[static_cast<std::size_t>(c)];
    }
    rep.entropy.assign(clusters, std::nan(""));
    double sum = 0.0;
    for (std::size_t c = 0; c < clusters; ++c) {
        if (rep.counts[c] == 0) continue;
        double h = 0.0;
        for (std::size_t p = 0; p < positions; ++p) {
            const std::size_t cnt = hist[c * positions + p];
            if (cnt == 0) continue;
            const double q = static_cast<double>(cnt) / static_cast<double>(rep.counts[c]);
            h -= q * std::log(q);
        }
        rep.entropy[c] = h;
        sum += h;
        ++rep.active;
    }
    rep.mean = rep.active ? sum / static_cast<double>(rep.active) : 0.0;
    return rep;
}

std::vector<int> cluster_assignments(const HeadBankConfig& bank, const ParamStore& params, std::size_t level,
                                     const Tensor& patches) {
    if (level >= bank.levels() || !bank.has_patch_head(level))
        throw std::invalid_argument("cluster_assignments: no patch head at level " + std::to_string(level));
    const Tensor rows = patches.ndim() == 2 ? patches : reshape(patches.detach(), {patches.rows(), patches.cols()});
    const Tensor logits = head_forward(params, head_prefix(Stream::patch, level),
                                       slice_embedding(rows.detach(), bank.dims[level], bank.dims), 1.0);
    std::vector<int> out(logits.rows());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = argmax_row(logits.data().subspan(r * logits.cols(), logits.cols()));
    return out;
}

// ---- k-means ----------------------------------------------------------------

KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations, double tolerance) {
    const RowMatrix x = as_matrix(points);
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<Eigen::Index>(x.cols());
    if (k == 0) throw std::invalid_argument("kmeans: K must be positive");
    if (k > n) throw std::invalid_argument("kmeans: K = " + std::to_string(k) + " exceeds the point count " + std::to_string(n));
    Rng rng(seed);
    RowMatrix c(static_cast<Eigen::Index>(k), d);
    const Eigen::VectorXd xnorm = x.rowwise().squaredNorm();

    // k-means++ seeding.
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t j = 0; j < k; ++j) {
        c.row(static_cast<Eigen::Index>(j)) = x.row(static_cast<Eigen::Index>(pick));
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (x.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(j))).squaredNorm());
            total += dist[i];
        }
        if (j + 1 == k) break;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.below(n));
            continue;
        }
        double target = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            target -= dist[i];
            if (target < 0.0 && dist[i] > 0.0) {
                pick = i;
                break;
            }
        }
    }

    KMeansResult res;
    res.labels.assign(n, 0);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < std::max<std::size_t>(max_iterations, 1); ++it) {
        const RowMatrix cross = x * c.transpose();
        const Eigen::VectorXd cnorm = c.rowwise().squaredNorm();
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const double v = xnorm(static_cast<Eigen::Index>(i)) - 2.0 * cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                                 cnorm(static_cast<Eigen::Index>(j));
                if (v < best) {
                    best = v;
                    arg = static_cast<int>(j);
                }
            }
            res.labels[i] = arg;
            inertia += std::max(best, 0.0);
        }
        res.inertia = inertia;
        res.iterations = it + 1;
        if (max_iterations == 0) break;
        RowMatrix sums = RowMatrix::Zero(static_cast<Eigen::Index>(k), d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums.row(res.labels[i]) += x.row(static_cast<Eigen::Index>(i));
            ++counts[static_cast<std::size_t>(res.labels[i])];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (counts[j] > 0) c.row(static_cast<Eigen::Index>(j)) = sums.row(static_cast<Eigen::Index>(j)) / static_cast<double>(counts[j]);
        const bool converged = std::isfinite(previous) && std::abs(previous - inertia) <= tolerance * std::max(previous, 1e-300);
        previous = inertia;
        if (converged) break;
    }
    res.centroids.assign(c.data(), c.data() + c.size());
    return res;
}

std::vector<int> match_clusters(std::span<const int> clusters, std::span<const int> classes, std::size_t k,
                                std::size_t num_classes) {
    if (clusters.size() != classes.size()) throw std::invalid_argument("match_clusters: label count mismatch");
    std::vector<double> inter(k * num_classes, 0.0);
    for (std::size_t i = 0; i < clusters.size(); ++i)
        inter[static_cast<std::size_t>(clusters[i]) * num_classes + static_cast<std::size_t>(classes[i])] += 1.0;
    std::vector<double> cost(inter.size());
    std::transform(inter.begin(), inter.end(), cost.begin(), [](double v) { return -v; });
    std::vector<int> map = hungarian(cost, k, num_classes).row_to_col;
    for (std::size_t j = 0; j < k; ++j) {
        if (map[j] >= 0) continue;
        map[j] = argmax_row(std::span<const double>(inter).subspan(j * num_classes, num_classes));
    }
    return map;
}

double mean_iou(std::span<const int> predicted, std::span<const int> classes, std::size_t num_classes) {
    std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto p = static_cast<std::size_t>(predicted[i]), g = static_cast<std::size_t>(classes[i]);
        if (p == g) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[g];
        }
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (uni[c] == 0) continue;
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++present;
    }
    return present ? sum / static_cast<double>(present) : 0.0;
}

OverclusterResult overcluster_miou(const Tensor& features, std::span<const int> classes, std::size_t k,
                                   std::span<const std::uint64_t> seeds) {
    if (features.ndim() != 2 || classes.size() != features.rows())
        throw std::invalid_argument("overcluster_miou: one class label per feature row required");
    if (seeds.empty()) throw std::invalid_argument("overcluster_miou: at least one seed is required");
    int max_class = -1;
    for (int c : classes) {
        if (c < 0) throw std::invalid_argument("overcluster_miou: negative class label");
        max_class = std::max(max_class, c);
    }
    const auto num_classes = static_cast<std::size_t>(max_class + 1);
    std::size_t distinct = 0;
    {
        std::vector<char> seen(num_classes, 0);
        for (int c : classes) seen[static_cast<std::size_t>(c)] = 1;
        distinct = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
    }
    if (k < distinct)
        throw std::invalid_argument("overcluster_miou: K = " + std::to_string(k) + " is below the class count " +
                                    std::to_string(distinct));
    OverclusterResult res;
    res.points = features.rows();
    for (auto seed : seeds) {
        const KMeansResult km = kmeans(features, k, seed);
        const auto map = match_clusters(km.labels, classes, k, num_classes);
        std::vector<int> pred(km.labels.size());
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = map[static_cast<std::size_t>(km.labels[i])];
        res.per_seed.push_back(mean_iou(pred, classes, num_classes));
    }
    res.mean = std::accumulate(res.per_seed.begin(), res.per_seed.end(), 0.0) / static_cast<double>(res.per_seed.size());
    double var = 0.0;
    for (double v : res.per_seed) var += (v - res.mean) * (v - res.mean);
    res.stddev = std::sqrt(var / static_cast<double>(res.per_seed.size()));
    return res;
}

// ---- PCA --------------------------------------------------------------------

Principal principal_components(const Tensor& x, std::size_t k) {
    const RowMatrix m = as_matrix(x);
    if (m.rows() < 2) throw std::invalid_argument("principal_components: need at least two rows");
    if (k == 0 || k > static_cast<std::size_t>(m.cols())) throw std::invalid_argument("principal_components: bad component count");
    const Eigen::RowVectorXd mean = m.colwise().mean();
    const RowMatrix centered = m.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(m.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Principal p;
    p.mean.assign(mean.data(), mean.data() + mean.size());
    const auto d = static_cast<std::size_t>(m.cols());
    for (std::size_t i = 0; i < k; ++i) {
        const auto col = static_cast<Eigen::Index>(d - 1 - i);
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        p.components.insert(p.components.end(), v.data(), v.data() + v.size());
        p.variances.push_back(std::max(eig.eigenvalues()(col), 0.0));
    }
    return p;
}

PcaImage pca_patch_rgb(const Tensor& patches, std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    if (patches.ndim() != 2 || patches.rows() != n) throw ShapeError("pca_patch_rgb: expected [rows*cols, D] patches");
    if (n < 4) throw std::invalid_argument("pca_patch_rgb: need at least 4 patches");
    const std::size_t d = patches.cols();
    PcaImage out;
    out.foreground.assign(n, 0);
    std::vector<double> rgb(3 * n, 0.5);
    auto finish = [&] {
        round_to_precision(rgb);
        out.rgb = Tensor({3, rows, cols}, std::move(rgb));
        return out;
    };

    const Principal first = principal_components(patches, 1);
    if (!(first.variances[0] > 1e-12)) {
        out.degenerate = true;
        return finish();
    }
    std::vector<double> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (patches[i * d + j] - first.mean[j]) * first.components[j];
        proj[i] = s;
    }
    const auto positive = static_cast<std::size_t>(std::count_if(proj.begin(), proj.end(), [](double v) { return v > 0.0; }));
    const bool flip = 2 * positive > n;
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < n; ++i) {
        const bool on = flip ? proj[i] < 0.0 : proj[i] > 0.0;
        out.foreground[i] = on ? 1 : 0;
        if (on) fg.push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!out.foreground[i])
            for (std::size_t c = 0; c < 3; ++c) rgb[c * n + i] = 0.0;
    if (fg.size() < 2) {
        out.degenerate = true;
        return finish();
    }
    std::vector<double> sub;
    for (auto i : fg) sub.insert(sub.end(), patches.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                 patches.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    const Tensor fg_feats({fg.size(), d}, std::move(sub));
    const std::size_t want = std::min<std::size_t>(3, d);
    const Principal second = principal_components(fg_feats, want);
    const double top = second.variances[0];
    for (std::size_t c = 0; c < 3; ++c) {
        if (c >= want || !(second.variances[c] > 1e-12 * std::max(top, 1e-300)) || !(second.variances[c] > 1e-18)) {
            out.degenerate = true;
            continue;
        }
        std::vector<double> v(fg.size());
        for (std::size_t k = 0; k < fg.size(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (fg_feats[k * d + j] - second.mean[j]) * second.components[c * d + j];
            v[k] = s;
        }
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double span = *hi - *lo;
        for (std::size_t k = 0; k < fg.size(); ++k) rgb[c * n + fg[k]] = span > 0.0 ? (v[k] - *lo) / span : 0.5;
    }
    return finish();
}

void write_pca_ppm(const std::filesystem::path& path, const PcaImage& img, std::size_t scale) {
    if (scale == 0) throw std::invalid_argument("write_pca_ppm: scale must be positive");
    const std::size_t rows = img.rgb.dim(1), cols = img.rgb.dim(2), h = rows * scale, w = cols * scale;
    std::vector<double> v(3 * h * w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) v[(c * h + y) * w + x] = img.rgb[(c * rows + y / scale) * cols + x / scale];
    write_ppm(path, Tensor({3, h, w}, std::move(v)));
}

// ---- linear probe -------------------------------------------------------------

LinearProbeResult linear_probe(const Tensor& train, std::span<const int> train_labels, const Tensor& test,
                               std::span<const int> test_labels, std::size_t epochs, std::span<const double> lrs) {
    if (train.ndim() != 2 || test.ndim() != 2 || train.cols() != test.cols())
        throw ShapeError("linear_probe: train/test feature shapes disagree");
    if (train_labels.size() != train.rows() || test_labels.size() != test.rows() || test.rows() == 0)
        throw std::invalid_argument("linear_probe: one label per row required");
    if (lrs.empty()) throw std::invalid_argument("linear_probe: empty learning-rate grid");
    int max_label = 0;
    for (int l : train_labels) {
        if (l < 0) throw std::invalid_argument("linear_probe: negative label");
        max_label = std::max(max_label, l);
    }
    for (int l : test_labels) max_label = std::max(max_label, l);
    if (std::all_of(train_labels.begin(), train_labels.end(), [&](int l) { return l == train_labels[0]; }))
        throw std::invalid_argument("linear_probe: degenerate input, a single class");
    const auto classes = static_cast<std::size_t>(max_label + 1);
    PrecisionScope scope(Precision::f64);
    const std::size_t d = train.cols();
    std::vector<double> onehot(train.rows() * classes, 0.0);
    for (std::size_t i = 0; i < train.rows(); ++i) onehot[i * classes + static_cast<std::size_t>(train_labels[i])] = 1.0;
    const Tensor targets({train.rows(), classes}, std::move(onehot));
    const Tensor x = train.detach(), xt = test.detach();

    LinearProbeResult res;
    res.count = test.rows();
    res.accuracy = -1.0;
    for (double lr : lrs) {
        ParamStore p;
        p.add("w", Tensor::zeros({d, classes}, true));
        p.add("b", Tensor::zeros({classes}, true));
        AdamState state;
        AdamWConfig opt;
        opt.lr = lr;
        for (std::size_t e = 0; e < epochs; ++e) {
            Tape tape;
            TapeScope on(tape);
            const Tensor loss = cross_entropy(affine(x, p.at("w"), p.at("b")), targets);
            tape.backward(loss);
            adamw_step(p, p.grads(), state, opt);
        }
        const Tensor logits = affine(xt, p.at("w").detach(), p.at("b").detach());
        std::size_t correct = 0;
        for (std::size_t i = 0; i < xt.rows(); ++i)
            correct += argmax_row(logits.data().subspan(i * classes, classes)) == test_labels[i];
        const double acc = static_cast<double>(correct) / static_cast<double>(xt.rows());
        res.per_lr.emplace_back(lr, acc);
        if (acc > res.accuracy) {
            res.accuracy = acc;
            res.best_lr = lr;
        }
    }
    return res;
}

// ---- report -------------------------------------------------------------------

void ProbeReport::write_csv(std::ostream& os) const {
    os << "# franca-probe v1\n";
    os << "kind,key,value,count\n";
    os << "probe,name," << probe << ",\n";
    os << "seed,seed," << seed << ",\n";
    for (const auto& [k, v] : params) os << "param," << k << ',' << v << ",\n";
    for (const auto& f : feature_files) os << "feature_file,path," << f << ",\n";
    char buf[64];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof buf, "%.9g", m.value);
        os << "metric," << m.key << ',' << buf << ',' << m.count << '\n';
    }
}

ProbeReport ProbeReport::parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "# franca-probe v1") throw FormatError("probe report: missing version line");
    if (!std::getline(in, line) || line != "kind,key,value,count") throw FormatError("probe report: missing header");
    ProbeReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 4) throw FormatError("probe report: malformed line '" + line + "'");
        if (f[0] == "probe") r.probe = f[2];
        else if (f[0] == "seed") r.seed = std::stoull(f[2]);
        else if (f[0] == "param") r.params.emplace_back(f[1], f[2]);
        else if (f[0] == "feature_file") r.feature_files.push_back(f[2]);
        else if (f[0] == "metric") r.metrics.push_back({f[1], std::stod(f[2]), std::stoull(f[3])});
        else throw FormatError("probe report: unknown row kind '" + f[0] + "'");
    }
    return r;
}

}  // namespace franca
