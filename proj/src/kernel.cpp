#include "isotropy/kernel.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "isotropy/jacobi.h"

namespace isotropy {

ZeroNormEmbedding::ZeroNormEmbedding(std::size_t index)
    : Error("embedding " + std::to_string(index) + " has zero norm"), index(index) {}

IndefiniteKernel::IndefiniteKernel(double eigenvalue)
    : Error("kernel is indefinite: normalized eigenvalue " + std::to_string(eigenvalue)),
      eigenvalue(eigenvalue) {}

TooFewSamples::TooFewSamples(std::size_t n)
    : Error("isotropy score needs at least 2 samples, got " + std::to_string(n)), n(n) {}

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidEmbedding("embedding has no entries");
    for (double v : values_)
        if (!std::isfinite(v)) throw InvalidEmbedding("embedding has a non-finite entry");
}

double Embedding::norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
}

EmbeddingSet::EmbeddingSet(std::vector<Embedding> rows, bool normalized)
    : rows_(std::move(rows)), normalized_(normalized) {
    if (rows_.empty()) throw InvalidEmbedding("embedding set is empty");
    const std::size_t d = rows_.front().dim();
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].dim() != d)
            throw InvalidEmbedding("embedding " + std::to_string(i) + " has dimension " +
                                   std::to_string(rows_[i].dim()) + ", expected " +
                                   std::to_string(d));
        if (normalized_ && std::abs(rows_[i].norm() - 1.0) > kUnitNormTolerance)
            throw InvalidEmbedding("embedding " + std::to_string(i) + " is flagged normalized but is not unit-norm");
    }
}

EmbeddingSet EmbeddingSet::first(std::size_t n) const {
    if (n == 0 || n > rows_.size())
        throw InvalidEmbedding("cannot take " + std::to_string(n) + " rows of a set of " +
                               std::to_string(rows_.size()));
    return EmbeddingSet({rows_.begin(), rows_.begin() + static_cast<std::ptrdiff_t>(n)}, normalized_);
}

CosineKernel CosineKernel::from_matrix(Matrix entries) {
    if (!entries.square() || entries.rows() == 0) throw InvalidKernel("kernel must be a non-empty square matrix");
    const std::size_t n = entries.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(entries(i, i) - 1.0) > kDiagonalTolerance)
            throw InvalidKernel("kernel diagonal entry " + std::to_string(i) + " is not 1");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = entries(i, j);
            if (!std::isfinite(v) || v < -1.0 - kEntryTolerance || v > 1.0 + kEntryTolerance)
                throw InvalidKernel("kernel entry out of [-1, 1]");
            if (std::abs(v - entries(j, i)) > kSymmetryTolerance) throw NotSymmetric("kernel is not symmetric");
        }
    }
    return CosineKernel(std::move(entries));
}

std::string_view measure_name(Measure m) {
    switch (m) {
        case Measure::vne: return "vne";
        case Measure::frobenius: return "frobenius";
        case Measure::log_det: return "log_det";
        case Measure::trace_inverse: return "trace_inverse";
    }
    return "unknown";
}

Measure parse_measure(std::string_view name) {
    for (Measure m : all_measures())
        if (measure_name(m) == name) return m;
    throw UnknownMeasure("unknown measure '" + std::string(name) + "'");
}

std::vector<Measure> all_measures() {
    return {Measure::vne, Measure::frobenius, Measure::log_det, Measure::trace_inverse};
}

double IsotropyReport::value(Measure m) const {
    switch (m) {
        case Measure::vne: return score;
        case Measure::frobenius: return frobenius;
        case Measure::log_det: return log_det;
        case Measure::trace_inverse: return trace_inverse;
    }
    return 0.0;
}

EmbeddingSet normalize_rows(const EmbeddingSet& set) {
    std::vector<Embedding> rows;
    rows.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double norm = set[i].norm();
        if (norm <= kZeroNormThreshold) throw ZeroNormEmbedding(i);
        std::vector<double> v(set[i].values().begin(), set[i].values().end());
        for (double& x : v) x /= norm;
        rows.emplace_back(std::move(v));
    }
    return EmbeddingSet(std::move(rows), true);
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

void fill_gram_row(const EmbeddingSet& unit, Matrix& k, std::size_t i) {
    const std::size_t n = unit.size();
    k(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
        const double c = dot(unit[i].values(), unit[j].values());
        k(i, j) = c;
        k(j, i) = c;
    }
}

// Eigenvalues of the raw kernel, descending.
std::vector<double> raw_eigenvalues(const Matrix& kernel, double jacobi_tolerance = 1e-12) {
    return jacobi_eigen(kernel, {.tolerance = jacobi_tolerance}).values;
}

void check_symmetric(const Matrix& m) {
    if (!m.square() || m.rows() == 0) throw InvalidKernel("kernel must be a non-empty square matrix");
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j)
            if (std::abs(m(i, j) - m(j, i)) > kSymmetryTolerance) throw NotSymmetric("kernel is not symmetric");
}

EigenSpectrum normalize_spectrum(const std::vector<double>& raw, double trace, double negative_tolerance) {
    if (!(trace > 0.0)) throw InvalidKernel("kernel trace must be positive");
    EigenSpectrum out;
    out.eigenvalues.reserve(raw.size());
    for (double lambda : raw) {
        double v = lambda / trace;
        if (v < -negative_tolerance) throw IndefiniteKernel(v);
        out.eigenvalues.push_back(std::max(v, 0.0));
    }
    return out;
}

double floored_log_det(const std::vector<double>& raw, double floor) {
    double s = 0.0;
    for (double lambda : raw) s += std::log(std::max(lambda, floor));
    return s;
}

double floored_trace_inverse(const std::vector<double>& raw, double floor) {
    double s = 0.0;
    for (double lambda : raw) s += 1.0 / std::max(lambda, floor);
    return s;
}

}  // namespace

CosineKernel cosine_kernel(const EmbeddingSet& set, Exec exec) {
    const EmbeddingSet unit = set.normalized() ? set : normalize_rows(set);
    const std::size_t n = unit.size();
    Matrix k(n, n);
    if (exec == Exec::parallel) {
        const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < rows; ++i) fill_gram_row(unit, k, static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) fill_gram_row(unit, k, i);
    }
    return CosineKernel::from_matrix(std::move(k));
}

EigenSpectrum eigen_symmetric(const Matrix& kernel) {
    check_symmetric(kernel);
    return normalize_spectrum(raw_eigenvalues(kernel), kernel.trace(), kNegativeEigenTolerance);
}

EigenSpectrum eigen_symmetric(const CosineKernel& kernel) { return eigen_symmetric(kernel.entries()); }

double von_neumann_entropy(const EigenSpectrum& spectrum) {
    double sum = 0.0;
    for (double lambda : spectrum.eigenvalues) {
        if (!(lambda >= 0.0)) throw InvalidSpectrum("spectrum has a negative or NaN entry");
        sum += lambda;
    }
    if (std::abs(sum - 1.0) > kSpectrumSumTolerance) throw InvalidSpectrum("spectrum does not sum to 1");
    double h = 0.0;
    for (double lambda : spectrum.eigenvalues)
        if (lambda > 0.0) h -= lambda * std::log(lambda);
    return h;
}

double isotropy_score(const CosineKernel& kernel) {
    if (kernel.n() < 2) throw TooFewSamples(kernel.n());
    return von_neumann_entropy(eigen_symmetric(kernel)) / std::log(static_cast<double>(kernel.n()));
}

double frobenius_measure(const CosineKernel& kernel) {
    double s = 0.0;
    for (double v : kernel.entries().data()) s += v * v;
    return std::sqrt(s);
}

double log_det_measure(const CosineKernel& kernel, double floor) {
    return floored_log_det(raw_eigenvalues(kernel.entries()), floor);
}

double trace_inverse_measure(const CosineKernel& kernel, double floor) {
    return floored_trace_inverse(raw_eigenvalues(kernel.entries()), floor);
}

IsotropyReport score_topic(const EmbeddingSet& set, const std::vector<Measure>& measures,
                           const MeasureConfig& config, Exec exec) {
    if (set.size() < 2) throw TooFewSamples(set.size());
    const CosineKernel kernel = cosine_kernel(normalize_rows(set), exec);
    const std::vector<double> raw = raw_eigenvalues(kernel.entries(), config.jacobi_tolerance);
    const EigenSpectrum spectrum =
        normalize_spectrum(raw, kernel.entries().trace(), config.negative_eigen_tolerance);

    IsotropyReport report;
    report.n = set.size();
    report.vne = von_neumann_entropy(spectrum);
    report.score = report.vne / std::log(static_cast<double>(report.n));
    report.frobenius = frobenius_measure(kernel);
    report.log_det = floored_log_det(raw, config.eigen_floor);
    report.trace_inverse = floored_trace_inverse(raw, config.eigen_floor);
    report.measure_config = config;
    report.measure_config.measures = measures.empty() ? all_measures() : measures;
    return report;
}

std::vector<TopicScore> score_topics(std::span<const EmbeddingSet> sets, const std::vector<Measure>& measures,
                                     const MeasureConfig& config, Exec exec) {
    std::vector<TopicScore> out(sets.size());
    auto score_one = [&](std::size_t t) {
        try {
            out[t].report = score_topic(sets[t], measures, config, Exec::serial);
        } catch (const std::exception& e) {
            out[t].error = e.what();
        }
    };
    if (exec == Exec::parallel) {
        const auto count = static_cast<std::ptrdiff_t>(sets.size());
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t t = 0; t < count; ++t) score_one(static_cast<std::size_t>(t));
    } else {
        for (std::size_t t = 0; t < sets.size(); ++t) score_one(t);
    }
    return out;
}

}  // namespace isotropy
