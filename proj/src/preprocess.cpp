#include "mpibench/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "mpibench/container.hpp"
#include "mpibench/json_io.hpp"

namespace mpibench {

void PreprocessConfig::validate() const {
    if (!(snr_threshold >= 0.0)) throw ConfigError("preprocess: snr_threshold must be >= 0");
    if (rank < 1) throw ConfigError("preprocess: rank K must be >= 1");
    for (const auto& b : bandpass)
        if (b.min_frequency >= b.max_frequency) throw ConfigError("preprocess: bandpass min must be < max");
}

SelectedRows select_rows(const RawDataset& ds, const PreprocessConfig& cfg) {
    cfg.validate();
    if (!ds.has_measurement()) throw DataError("select_rows: dataset has no measurement");
    const Eigen::Index m = ds.rows();

    int coils = 0, fmin = std::numeric_limits<int>::max(), fmax = std::numeric_limits<int>::min();
    for (const auto& l : ds.row_labels) {
        coils = std::max(coils, l.coil + 1);
        fmin = std::min(fmin, l.frequency);
        fmax = std::max(fmax, l.frequency);
    }
    if (!cfg.bandpass.empty() && cfg.bandpass.size() != 1 && int(cfg.bandpass.size()) != coils) {
        throw ConfigError("select_rows: bandpass lists " + std::to_string(cfg.bandpass.size()) + " bands for " +
                          std::to_string(coils) + " coils");
    }
    for (const auto& b : cfg.bandpass) {
        if (b.min_frequency < fmin || b.max_frequency > fmax) {
            throw ConfigError("select_rows: band [" + std::to_string(b.min_frequency) + ", " +
                              std::to_string(b.max_frequency) + "] outside dataset frequency range [" +
                              std::to_string(fmin) + ", " + std::to_string(fmax) + "]");
        }
    }
    auto band_for = [&](int coil) -> Band {
        if (cfg.bandpass.empty()) return {fmin, fmax};
        return cfg.bandpass.size() == 1 ? cfg.bandpass[0] : cfg.bandpass[std::size_t(coil)];
    };

    // Pair score: max SNR over the Re/Im rows of one (coil, frequency).
    std::map<std::pair<int, int>, double> pair_snr;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& l = ds.row_labels[std::size_t(i)];
        auto [it, inserted] = pair_snr.try_emplace({l.coil, l.frequency}, ds.snr_per_row[i]);
        if (!inserted) it->second = std::max(it->second, ds.snr_per_row[i]);
    }

    SelectedRows out;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& l = ds.row_labels[std::size_t(i)];
        const Band b = band_for(l.coil);
        if (l.frequency < b.min_frequency || l.frequency > b.max_frequency) continue;
        if (!(pair_snr[{l.coil, l.frequency}] >= cfg.snr_threshold)) continue;
        out.source_index.push_back(i);
    }
    if (out.source_index.empty()) {
        std::ostringstream os;
        os << "select_rows: no rows survive SNR threshold tau=" << cfg.snr_threshold << " within the band";
        if (!cfg.bandpass.empty()) os << " [" << cfg.bandpass[0].min_frequency << ", " << cfg.bandpass[0].max_frequency << "]";
        throw DataError(os.str());
    }
    const auto k = Eigen::Index(out.source_index.size());
    out.rows.resize(k, ds.system_rows.cols());
    out.data.resize(k);
    out.snr.resize(k);
    for (Eigen::Index r = 0; r < k; ++r) {
        const Eigen::Index i = out.source_index[std::size_t(r)];
        out.rows.row(r) = ds.system_rows.row(i);
        out.data[r] = ds.measurement[i] - ds.background[i];
        out.snr[r] = ds.snr_per_row[i];
        out.labels.push_back(ds.row_labels[std::size_t(i)]);
    }
    return out;
}

Vector whitening_matrix(const Matrix& samples) {
    if (samples.rows() < 2) throw DataError("whitening_matrix: need at least 2 background samples, got " +
                                            std::to_string(samples.rows()));
    const double b = double(samples.rows());
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    Vector w(samples.cols());
    for (Eigen::Index i = 0; i < samples.cols(); ++i) {
        const double var = (samples.col(i).array() - mean[i]).square().sum() / (b - 1.0);
        w[i] = 1.0 / std::sqrt(var + kVarianceFloor);
    }
    return w;
}

ProcessedSystem build_system(const RawDataset& ds, const PreprocessConfig& cfg) {
    SelectedRows sel = select_rows(ds, cfg);

    ProcessedSystem sys;
    sys.config = cfg;
    sys.grid = ds.grid;
    sys.retained_rows = sel.labels;
    if (cfg.whitening) {
        const Vector all = whitening_matrix(ds.background_samples);
        Vector w(sel.rows.rows());
        for (Eigen::Index r = 0; r < w.size(); ++r) w[r] = all[sel.source_index[std::size_t(r)]];
        sel.rows = w.asDiagonal() * sel.rows;
        sel.data = w.cwiseProduct(sel.data);
        sys.whitening_weights = w;
    }
    sys.requested_rank = cfg.rank;
    const Eigen::Index max_rank = std::min(sel.rows.rows(), sel.rows.cols());
    const Eigen::Index K = std::min(cfg.rank, max_rank);
    sys.rank_clamped = K < cfg.rank;
    sys.svd = rsvd(sel.rows, K, cfg.rsvd_options());
    sys.A = sys.svd.U.transpose() * sel.rows;
    sys.y = sys.svd.U.transpose() * sel.data;
    return sys;
}

ProcessedSystem make_system(Matrix A, Vector y, GridSpec grid) {
    if (A.rows() != y.size()) throw DimensionError("make_system: A has " + std::to_string(A.rows()) + " rows, y has length " + std::to_string(y.size()));
    if (static_cast<std::size_t>(A.cols()) != grid.dims.size()) throw DimensionError("make_system: A columns do not match grid " + to_string(grid.dims));
    ProcessedSystem sys;
    sys.A = std::move(A);
    sys.y = std::move(y);
    sys.grid = grid;
    sys.config.whitening = false;
    sys.config.rank = sys.A.rows();
    sys.requested_rank = sys.A.rows();
    for (Eigen::Index i = 0; i < sys.A.rows(); ++i) sys.retained_rows.push_back({0, int(i), Part::re});
    return sys;
}

namespace {

json config_to_json(const PreprocessConfig& c) {
    json bands = json::array();
    for (const auto& b : c.bandpass) bands.push_back({b.min_frequency, b.max_frequency});
    return {{"snr_threshold", c.snr_threshold}, {"bandpass", bands}, {"whitening", c.whitening},
            {"rank", c.rank},                   {"rsvd_seed", c.rsvd_seed}};
}

}  // namespace

void save_system(const ProcessedSystem& sys, const std::string& dir) {
    ContainerWriter w(dir, "processed_system");
    w.add("A", sys.A);
    w.add("y", sys.y);
    std::vector<double> labels;
    for (const auto& l : sys.retained_rows) {
        labels.push_back(l.coil);
        labels.push_back(l.frequency);
        labels.push_back(static_cast<double>(l.part));
    }
    w.add("retained_rows", labels, {sys.retained_rows.size(), 3});
    if (sys.whitening_weights) w.add("whitening_weights", *sys.whitening_weights);
    if (sys.svd.S.size() > 0) {
        w.add("svd_U", sys.svd.U);
        w.add("svd_S", sys.svd.S);
        w.add("svd_V", sys.svd.V);
    }
    w.metadata()["grid"] = grid_to_json(sys.grid);
    w.metadata()["config"] = config_to_json(sys.config);
    w.metadata()["requested_rank"] = sys.requested_rank;
    w.metadata()["rank_clamped"] = sys.rank_clamped;
    w.finish();
}

ProcessedSystem load_system(const std::string& dir) {
    ContainerReader r(dir);
    if (r.kind() != "processed_system") throw DataError(dir + ": container holds '" + r.kind() + "', not a processed system");
    ProcessedSystem sys;
    sys.A = r.matrix("A");
    sys.y = r.vector("y");
    const auto labels = r.raw("retained_rows");
    for (std::size_t i = 0; i + 2 < labels.size(); i += 3)
        sys.retained_rows.push_back({int(labels[i]), int(labels[i + 1]), labels[i + 2] == 0.0 ? Part::re : Part::im});
    if (r.has("whitening_weights")) sys.whitening_weights = r.vector("whitening_weights");
    if (r.has("svd_S")) {
        sys.svd.U = r.matrix("svd_U");
        sys.svd.S = r.vector("svd_S");
        sys.svd.V = r.matrix("svd_V");
    }
    try {
        const json& meta = r.metadata();
        sys.grid = grid_from_json(meta.at("grid"));
        const json& c = meta.at("config");
        sys.config.snr_threshold = c.at("snr_threshold").get<double>();
        for (const auto& b : c.at("bandpass")) sys.config.bandpass.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
        sys.config.whitening = c.at("whitening").get<bool>();
        sys.config.rank = c.at("rank").get<Eigen::Index>();
        sys.config.rsvd_seed = c.at("rsvd_seed").get<std::uint64_t>();
        sys.requested_rank = meta.at("requested_rank").get<Eigen::Index>();
        sys.rank_clamped = meta.at("rank_clamped").get<bool>();
    } catch (const json::exception& e) {
        throw DataError(dir + ": bad processed-system metadata: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(dir + ": bad processed-system metadata: " + e.what());
    }
    if (sys.A.rows() != sys.y.size()) throw DataError(dir + ": A and y disagree in length");
    return sys;
}

}  // namespace mpibench
