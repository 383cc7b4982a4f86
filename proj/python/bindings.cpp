// Python bindings: numpy arrays in, numpy arrays out. Volumes are (nz, ny, nx)
// C-ordered arrays, which matches the x-fastest layout of Volume.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "mpibench/bench.hpp"
#include "mpibench/error.hpp"

namespace py = pybind11;
using namespace mpibench;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Volume to_volume(const Array& a, const char* name) {
    if (a.ndim() != 3) throw DimensionError(std::string(name) + " must be a 3D array (nz, ny, nx)");
    const Dims3 d{std::size_t(a.shape(2)), std::size_t(a.shape(1)), std::size_t(a.shape(0))};
    Vector v = Eigen::Map<const Vector>(a.data(), Eigen::Index(d.size()));
    return Volume(d, std::move(v));
}

Array from_volume(const Volume& v) {
    Array out({v.dims.nz, v.dims.ny, v.dims.nx});
    std::copy(v.values.data(), v.values.data() + v.values.size(), out.mutable_data());
    return out;
}

Array from_vector(const Vector& v) {
    Array out(v.size());
    std::copy(v.data(), v.data() + v.size(), out.mutable_data());
    return out;
}

Array from_matrix(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data(), m.data() + m.size(), out.mutable_data());  // both row-major
    return out;
}

json to_json(const py::object& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

GridSpec grid_for(const ExperimentConfig& cfg) { return cfg.simulate ? cfg.simulate->grid : GridSpec{}; }

int cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"mpibench"};
    for (const auto& a : args) argv.push_back(a.c_str());
    py::gil_scoped_release release;
    return run_cli(int(argv.size()), argv.data());
}

py::dict system_dict(const ProcessedSystem& sys) {
    py::dict d;
    d["A"] = from_matrix(sys.A);
    d["y"] = from_vector(sys.y);
    d["dims"] = py::make_tuple(sys.grid.dims.nz, sys.grid.dims.ny, sys.grid.dims.nx);
    d["singular_values"] = from_vector(sys.svd.S);
    return d;
}

// `method` is a method object as in the "reconstruct" config section; it must select one run.
py::list reconstruct(const Array& A, const Array& y, const py::object& method, const py::object& experiment) {
    if (A.ndim() != 2 || y.ndim() != 1) throw DimensionError("A must be 2D and y 1D");
    json j = experiment.is_none() ? json::object() : to_json(experiment);
    j["reconstruct"] = to_json(method);
    const ExperimentConfig cfg = experiment_from_json(j);
    const GridSpec grid = grid_for(cfg);
    if (std::size_t(A.shape(1)) != grid.dims.size())
        throw DimensionError("A has " + std::to_string(A.shape(1)) + " columns but the grid has " +
                             std::to_string(grid.dims.size()) + " voxels");
    Matrix Am = Eigen::Map<const Matrix>(A.data(), A.shape(0), A.shape(1));
    Vector yv = Eigen::Map<const Vector>(y.data(), y.shape(0));
    const std::vector<ProcessedSystem> systems{make_system(std::move(Am), std::move(yv), grid)};
    SweepConfig one{{*cfg.reconstruct}};
    const auto runs = expand_runs(one, systems);
    if (runs.size() != 1)
        throw ConfigError("method must select exactly one run (got " + std::to_string(runs.size()) + ")");
    SolverTrace trace;
    {
        py::gil_scoped_release release;
        trace = execute_run(one.methods[0], runs[0], systems[0]);
    }
    py::list out;
    for (const auto& cp : trace.checkpoints) {
        py::dict d;
        d["iteration"] = cp.iteration;
        d["volume"] = from_volume(cp.volume);
        d["fidelity"] = cp.fidelity;
        d["objective"] = cp.objective;
        out.append(d);
    }
    return out;
}

// Shift-maximized scores against the phantom of `experiment.simulate`.
py::object evaluate(const Array& x, const py::object& experiment) {
    const ExperimentConfig cfg = experiment_from_json(to_json(experiment));
    if (!cfg.simulate) throw ConfigError("missing required field 'simulate'");
    const Volume v = to_volume(x, "x");
    if (v.dims != cfg.simulate->grid.dims) throw DimensionError("x does not match simulate.grid");
    QualityReport r;
    {
        py::gil_scoped_release release;
        const auto refs =
            ReferenceCache::global().get(cfg.simulate->phantom, cfg.simulate->grid, cfg.metrics.shifts());
        r = eps_metrics(v, *refs, cfg.metrics.data_range);
    }
    return from_json(r.to_json());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Reconstruction benchmark core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());

    m.def("run_cli", &cli, py::arg("args"), "Run the command-line tool in-process; returns the exit code.");
    m.def(
        "psnr", [](const Array& x, const Array& ref, double range) { return psnr(to_volume(x, "x"), to_volume(ref, "ref"), range); },
        py::arg("x"), py::arg("ref"), py::arg("data_range") = kDefaultDataRange);
    m.def(
        "ssim3d",
        [](const Array& x, const Array& ref, double range) { return ssim3d(to_volume(x, "x"), to_volume(ref, "ref"), range); },
        py::arg("x"), py::arg("ref"), py::arg("data_range") = kDefaultDataRange);
    m.def(
        "phantom",
        [](const py::object& experiment) {
            const ExperimentConfig cfg = experiment_from_json(to_json(experiment));
            if (!cfg.simulate) throw ConfigError("missing required field 'simulate'");
            return from_volume(rasterize_phantom(cfg.simulate->phantom, cfg.simulate->grid).volume);
        },
        py::arg("experiment"), "Rasterized phantom of `experiment.simulate`.");
    m.def("evaluate", &evaluate, py::arg("x"), py::arg("experiment"));
    m.def(
        "load_system", [](const std::string& dir) { return system_dict(load_system(dir)); }, py::arg("dir"));
    m.def("reconstruct", &reconstruct, py::arg("A"), py::arg("y"), py::arg("method"),
          py::arg("experiment") = py::none());
    m.def("halving_grid", &halving_grid, py::arg("first") = 1, py::arg("last") = 40, py::arg("stride") = 1);
}
