#include "whodet/transform.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

namespace {

void require_channels(int have, int want, const char* what) {
    if (have != want)
        throw ValidationError(std::string(what) + " expects " + std::to_string(want) + " channels, map has " +
                              std::to_string(have));
}

// Cells of a map as rows of a double matrix.
Eigen::MatrixXd cells_as_rows(const FeatureMap& map) {
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        map.data().data(), static_cast<Eigen::Index>(map.cells()), map.channels());
    return m.cast<double>();
}

}  // namespace

// ---------------------------------------------------------------------------

void validate(const ChannelScaler& scaler) {
    if (scaler.maxAbs.empty()) throw ValidationError("channel scaler has no channels");
    for (std::size_t c = 0; c < scaler.maxAbs.size(); ++c)
        if (!(scaler.maxAbs[c] > 0) || !std::isfinite(scaler.maxAbs[c]))
            throw ValidationError("channel scaler entry " + std::to_string(c) + " must be positive and finite");
}

void ChannelMaximaAccumulator::add(const FeatureMap& map) {
    if (maps_ == 0 && max_.empty()) max_.assign(map.channels(), 0.0);
    require_channels(map.channels(), static_cast<int>(max_.size()), "channel maxima accumulator");
    const int F = map.channels();
    const auto data = map.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        double& m = max_[i % F];
        m = std::max(m, static_cast<double>(std::abs(data[i])));
    }
    ++maps_;
}

void ChannelMaximaAccumulator::merge(const ChannelMaximaAccumulator& other) {
    if (other.maps_ == 0) return;
    if (maps_ == 0) {
        *this = other;
        return;
    }
    if (other.max_.size() != max_.size())
        throw ValidationError("cannot merge channel maxima with different channel counts");
    for (std::size_t c = 0; c < max_.size(); ++c) max_[c] = std::max(max_[c], other.max_[c]);
    maps_ += other.maps_;
}

ChannelScaler ChannelMaximaAccumulator::finalize() const {
    if (maps_ == 0) throw ValidationError("cannot learn channel maxima from an empty corpus");
    ChannelScaler s{max_};
    for (double& m : s.maxAbs)
        if (!(m > 0)) m = 1.0;
    return s;
}

ChannelScaler learn_channel_maxima(std::span<const FeatureMap> maps) {
    ChannelMaximaAccumulator acc;
    for (const auto& m : maps) acc.add(m);
    return acc.finalize();
}

FeatureMap apply_scaler(const FeatureMap& map, const ChannelScaler& scaler) {
    validate(scaler);
    require_channels(map.channels(), scaler.channels(), "channel scaler");
    FeatureMap out = map;
    const int F = map.channels();
    auto data = out.data();
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(static_cast<double>(data[i]) / scaler.maxAbs[i % F]);
    return out;
}

void save_scaler(const ChannelScaler& scaler, const std::filesystem::path& path) {
    validate(scaler);
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (double m : scaler.maxAbs) out << m << "\n";
    write_file_atomic(path, out.str());
}

ChannelScaler load_scaler(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    ChannelScaler s;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            std::size_t used = 0;
            s.maxAbs.push_back(std::stod(line, &used));
            if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineNo) + ": expected one number per line");
        }
    }
    try {
        validate(s);
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------

void validate(const PcaTransform& pca) {
    const auto k = pca.basis.rows();
    const auto F = pca.basis.cols();
    if (k < 1 || k > F) throw ValidationError("PCA output dimension must be in [1, F]");
    if (pca.mean.size() != F) throw ValidationError("PCA mean length does not match the input dimension");
    if (!pca.mean.allFinite() || !pca.basis.allFinite()) throw ValidationError("PCA transform has non-finite values");
}

CovarianceAccumulator::CovarianceAccumulator(int dim)
    : dim_(dim), sum_(static_cast<std::size_t>(dim)),
      outer_(static_cast<std::size_t>(dim) * (dim + 1) / 2) {
    if (dim < 0) throw ValidationError("covariance dimension must be non-negative");
}

void CovarianceAccumulator::addBlock(const Eigen::MatrixXd& samples) {
    if (samples.rows() == 0) return;
    const Eigen::VectorXd colSum = samples.colwise().sum().transpose();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim_, dim_);
    gram.selfadjointView<Eigen::Upper>().rankUpdate(samples.transpose());
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i) {
        sum_[i].add(colSum[i]);
        for (int j = i; j < dim_; ++j) outer_[idx++].add(gram(i, j));
    }
    count_ += static_cast<std::uint64_t>(samples.rows());
}

void CovarianceAccumulator::add(std::span<const double> sample) {
    if (static_cast<int>(sample.size()) != dim_)
        throw ValidationError("sample of length " + std::to_string(sample.size()) + " fed to a " +
                              std::to_string(dim_) + "-dimensional covariance accumulator");
    Eigen::MatrixXd row(1, dim_);
    for (int i = 0; i < dim_; ++i) row(0, i) = sample[i];
    addBlock(row);
}

void CovarianceAccumulator::add(const FeatureMap& map) {
    require_channels(map.channels(), dim_, "covariance accumulator");
    addBlock(cells_as_rows(map));
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other) {
    if (other.dim_ != dim_) throw ValidationError("cannot merge covariance accumulators of different dimension");
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
    for (std::size_t i = 0; i < outer_.size(); ++i) outer_[i] += other.outer_[i];
    count_ += other.count_;
}

Eigen::VectorXd CovarianceAccumulator::mean() const {
    if (count_ == 0) throw ValidationError("mean of an empty accumulator");
    Eigen::VectorXd m(dim_);
    for (int i = 0; i < dim_; ++i) m[i] = static_cast<double>(sum_[i].longValue() / count_);
    return m;
}

Eigen::MatrixXd CovarianceAccumulator::covariance() const {
    if (count_ < 2) throw ValidationError("covariance needs at least 2 samples, have " + std::to_string(count_));
    const long double n = static_cast<long double>(count_);
    Eigen::MatrixXd c(dim_, dim_);
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i)
        for (int j = i; j < dim_; ++j) {
            const long double centered = outer_[idx++].longValue() - sum_[i].longValue() * sum_[j].longValue() / n;
            c(i, j) = c(j, i) = static_cast<double>(centered / (n - 1));
        }
    return c;
}

PcaTransform learn_pca(const CovarianceAccumulator& acc, int k) {
    const int F = acc.dim();
    if (k < 1 || k > F)
        throw ValidationError("PCA output dimension k=" + std::to_string(k) + " must be in [1, " + std::to_string(F) + "]");
    if (acc.count() < 2)
        throw ValidationError("PCA needs at least 2 samples, have " + std::to_string(acc.count()));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(acc.covariance());
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of the feature covariance failed");

    PcaTransform pca;
    pca.mean = acc.mean();
    pca.basis.resize(k, F);
    pca.eigenvalues.resize(k);
    for (int r = 0; r < k; ++r) {
        // Eigen sorts eigenvalues in increasing order.
        Eigen::VectorXd axis = eig.eigenvectors().col(F - 1 - r);
        Eigen::Index dominant = 0;
        axis.cwiseAbs().maxCoeff(&dominant);
        if (axis[dominant] < 0) axis = -axis;
        pca.basis.row(r) = axis.transpose();
        pca.eigenvalues[r] = std::max(0.0, eig.eigenvalues()[F - 1 - r]);
    }
    return pca;
}

PcaTransform learn_pca(std::span<const std::vector<double>> cells, int k) {
    if (cells.empty()) throw ValidationError("PCA needs at least 2 samples, have 0");
    CovarianceAccumulator acc(static_cast<int>(cells.front().size()));
    for (const auto& c : cells) acc.add(c);
    return learn_pca(acc, k);
}

FeatureMap apply_pca(const FeatureMap& map, const PcaTransform& pca) {
    require_channels(map.channels(), pca.inputDim(), "PCA transform");
    const Eigen::MatrixXd centered = cells_as_rows(map).rowwise() - pca.mean.transpose();
    const Eigen::MatrixXd projected = centered * pca.basis.transpose();
    const int k = pca.outputDim();
    FeatureMap out(map.width(), map.height(), k, map.geometry(), map.scale());
    auto data = out.data();
    for (Eigen::Index i = 0; i < projected.rows(); ++i)
        for (int c = 0; c < k; ++c) data[static_cast<std::size_t>(i) * k + c] = static_cast<float>(projected(i, c));
    return out;
}

void save_pca(const PcaTransform& pca, const std::filesystem::path& path) {
    validate(pca);
    nlohmann::json j;
    j["k"] = pca.outputDim();
    j["F"] = pca.inputDim();
    j["mean"] = std::vector<double>(pca.mean.data(), pca.mean.data() + pca.mean.size());
    j["basis"] = nlohmann::json::array();
    for (int r = 0; r < pca.outputDim(); ++r) {
        std::vector<double> row(pca.inputDim());
        for (int c = 0; c < pca.inputDim(); ++c) row[c] = pca.basis(r, c);
        j["basis"].push_back(row);
    }
    if (pca.eigenvalues.size() == pca.outputDim())
        j["eigenvalues"] = std::vector<double>(pca.eigenvalues.data(), pca.eigenvalues.data() + pca.eigenvalues.size());
    write_file_atomic(path, j.dump() + "\n");
}

PcaTransform load_pca(const std::filesystem::path& path) {
    PcaTransform pca;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        const int k = j.at("k").get<int>();
        const int F = j.at("F").get<int>();
        if (k < 1 || F < 1 || k > F) throw FormatError(path.string() + ": invalid k/F");
        const auto mean = j.at("mean").get<std::vector<double>>();
        const auto basis = j.at("basis").get<std::vector<std::vector<double>>>();
        if (static_cast<int>(mean.size()) != F) throw FormatError(path.string() + ": mean length differs from F");
        if (static_cast<int>(basis.size()) != k) throw FormatError(path.string() + ": basis row count differs from k");
        pca.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), F);
        pca.basis.resize(k, F);
        for (int r = 0; r < k; ++r) {
            if (static_cast<int>(basis[r].size()) != F)
                throw FormatError(path.string() + ": basis row " + std::to_string(r) + " length differs from F");
            for (int c = 0; c < F; ++c) pca.basis(r, c) = basis[r][c];
        }
        if (j.contains("eigenvalues")) {
            const auto ev = j.at("eigenvalues").get<std::vector<double>>();
            if (static_cast<int>(ev.size()) == k) pca.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    try {
        validate(pca);
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return pca;
}

// ---------------------------------------------------------------------------

FeatureMap combine_layers(std::span<const FeatureMap> maps) {
    if (maps.empty()) throw ValidationError("combine_layers needs at least one map");
    if (maps.size() == 1) return maps.front();

    const auto finest = std::min_element(maps.begin(), maps.end(), [](const FeatureMap& a, const FeatureMap& b) {
        return a.geometry().cellWidth * a.geometry().cellHeight < b.geometry().cellWidth * b.geometry().cellHeight;
    });
    const CellGeometry fine = finest->geometry();
    int channels = 0;
    for (const auto& m : maps) {
        const CellGeometry& g = m.geometry();
        if (g.cellWidth % fine.cellWidth != 0 || g.cellHeight % fine.cellHeight != 0)
            throw ValidationError("cell size " + std::to_string(g.cellWidth) + "x" + std::to_string(g.cellHeight) +
                                  " is not an integer multiple of the finest cell size " +
                                  std::to_string(fine.cellWidth) + "x" + std::to_string(fine.cellHeight));
        if (m.empty()) throw ValidationError("combine_layers got an empty map");
        channels += m.channels();
    }

    const int W = finest->width();
    const int H = finest->height();
    FeatureMap out(W, H, channels, fine, finest->scale());
    int offset = 0;
    for (const auto& m : maps) {
        const int rx = m.geometry().cellWidth / fine.cellWidth;
        const int ry = m.geometry().cellHeight / fine.cellHeight;
        const int F = m.channels();
        for (int y = 0; y < H; ++y) {
            const int cy = std::min(y / ry, m.height() - 1);
            for (int x = 0; x < W; ++x) {
                const int cx = std::min(x / rx, m.width() - 1);
                std::copy_n(m.cell(cx, cy).begin(), F, out.cell(x, y).begin() + offset);
            }
        }
        offset += F;
    }
    return out;
}

}  // namespace whodet
