#include "ipfield/feature_io.hpp"
#include "ipfield/field.hpp"
#include "ipfield/grid.hpp"
#include "ipfield/metrics.hpp"
#include "ipfield/net.hpp"
#include "ipfield/synth_data.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ipfield;

namespace {

std::vector<bool> to_bools(const std::vector<int>& flags) { return {flags.begin(), flags.end()}; }

}  // namespace

PYBIND11_MODULE(_ipfield, m) {
    m.doc() = "Information potential field density scores and the spectrally normalised residual MLP";

    py::register_exception<FeatureIoError>(m, "FeatureIoError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);

    // synthetic data
    m.def(
        "make_dataset",
        [](const std::string& kind, int n_per_class, double noise, std::uint64_t seed) {
            LabeledDataset2D d = make_dataset(parse_dataset_kind(kind), n_per_class, noise, seed);
            return py::make_tuple(d.points, d.labels, d.num_classes);
        },
        py::arg("kind"), py::arg("n_per_class"), py::arg("noise"), py::arg("seed") = 0,
        "Returns (points N x 2, labels, num_classes) for 'moons' or 'spirals'.");
    m.def(
        "make_off_manifold_points",
        [](const std::string& kind, int count, double min_distance, std::uint64_t seed) {
            return make_off_manifold_points(parse_dataset_kind(kind), count, min_distance, seed);
        },
        py::arg("kind"), py::arg("count"), py::arg("min_distance"), py::arg("seed") = 0);

    // field
    py::class_<IpfField>(m, "IpfField")
        .def(py::init<RowMatrix, double>(), py::arg("reference"), py::arg("bandwidth"))
        .def(
            "evaluate", [](const IpfField& f, const RowMatrix& q, int threads) {
                EvalOptions o;
                o.threads = threads;
                return f.evaluate(q, o);
            },
            py::arg("queries"), py::arg("threads") = 0, py::call_guard<py::gil_scoped_release>())
        .def("evaluate_log", &IpfField::evaluate_log, py::arg("queries"), py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("bandwidth", &IpfField::bandwidth)
        .def_property_readonly("size", &IpfField::size)
        .def_property_readonly("dim", &IpfField::dim);

    m.def(
        "calibrate_threshold",
        [](const IpfField& f, double percentile) { return calibrate_threshold(f, percentile); },
        py::arg("field"), py::arg("percentile") = kDefaultThresholdPercentile);
    m.def(
        "decide",
        [](const IpfField& f, const std::vector<double>& z, double threshold) {
            const OodDecision d = decide(f, z, threshold);
            return py::dict(py::arg("score") = d.score, py::arg("threshold") = d.threshold,
                            py::arg("is_ood") = d.is_ood);
        },
        py::arg("field"), py::arg("query"), py::arg("threshold"));
    m.def("silverman_bandwidth", &silverman_bandwidth, py::arg("features"));
    m.def(
        "sweep_bandwidth",
        [](const RowMatrix& ref, const RowMatrix& id_val, const RowMatrix& ood_val, const std::vector<double>& grid) {
            SweepResult r;
            {
                py::gil_scoped_release release;
                r = sweep_bandwidth(ref, id_val, ood_val, grid);
            }
            py::list table;
            for (const auto& row : r.table)
                table.append(py::dict(py::arg("bandwidth") = row.bandwidth, py::arg("auroc") = row.auroc,
                                      py::arg("id_coverage") = row.id_coverage));
            return py::dict(py::arg("best_bandwidth") = r.best_bandwidth, py::arg("best_auroc") = r.best_auroc,
                            py::arg("table") = table);
        },
        py::arg("reference"), py::arg("id_val"), py::arg("ood_val"), py::arg("grid"));
    m.def("linear_grid", &linear_grid, py::arg("lo"), py::arg("hi"), py::arg("count"));
    m.def("log_grid", &log_grid, py::arg("lo"), py::arg("hi"), py::arg("count"));

    // metrics
    m.def(
        "auroc", [](const std::vector<double>& id, const std::vector<double>& ood) { return auroc(id, ood); },
        py::arg("scores_id"), py::arg("scores_ood"));
    m.def(
        "ece",
        [](const std::vector<double>& conf, const std::vector<int>& correct, int bins) {
            return ece(conf, to_bools(correct), bins);
        },
        py::arg("confidences"), py::arg("correct"), py::arg("num_bins") = kDefaultEceBins);
    m.def(
        "accuracy", [](const std::vector<int>& p, const std::vector<int>& t) { return accuracy(p, t); },
        py::arg("predictions"), py::arg("truth"));
    m.def("softmax", &softmax, py::arg("logits"));
    m.def("softmax_entropy", &softmax_entropy, py::arg("logits"));

    // feature files
    m.def(
        "read_features",
        [](const std::filesystem::path& p) {
            FeatureMatrix f = load_features(p);
            return py::make_tuple(f.data, f.labels);
        },
        py::arg("path"), "Returns (data, labels or None) from an IPFF or CSV file.");
    m.def(
        "write_features",
        [](const std::filesystem::path& p, const RowMatrix& data, std::optional<std::vector<int>> labels) {
            FeatureMatrix f;
            f.data = data;
            f.labels = std::move(labels);
            write_features(f, p);
        },
        py::arg("path"), py::arg("data"), py::arg("labels") = py::none());

    // network
    py::class_<SnMlp>(m, "SnMlp")
        .def("forward",
             [](const SnMlp& net, const RowMatrix& x) {
                 ForwardResult r = net.forward(x);
                 return py::make_tuple(r.features, r.logits);
             },
             py::arg("inputs"), "Returns (features, logits).")
        .def("features", &SnMlp::features, py::arg("inputs"))
        .def("layer_weights",
             [](const SnMlp& net) {
                 std::vector<RowMatrix> out;
                 for (const auto& l : net.layers()) out.push_back(l.weight);
                 return out;
             })
        .def_property_readonly("feature_dim", &SnMlp::feature_dim)
        .def("save", &SnMlp::save, py::arg("path"))
        .def_static("load", &SnMlp::load, py::arg("path"));

    m.def(
        "train",
        [](const RowMatrix& x, const std::vector<int>& y, int num_classes, int epochs, double lr, double momentum,
           int batch_size, std::uint64_t seed, bool sn, double sn_coeff, int sn_iters, int hidden_dim,
           int num_blocks, const std::string& activation) {
            TrainConfig c;
            c.epochs = epochs;
            c.learning_rate = lr;
            c.momentum = momentum;
            c.batch_size = batch_size;
            c.seed = seed;
            c.sn_enabled = sn;
            c.sn_coeff = sn_coeff;
            c.sn_power_iters = sn_iters;
            c.hidden_dim = hidden_dim;
            c.num_blocks = num_blocks;
            c.activation = parse_activation(activation);
            std::optional<TrainResult> r;
            {
                py::gil_scoped_release release;
                r.emplace(train(x, y, num_classes, c));
            }
            return py::make_tuple(std::move(r->model), r->loss_curve);
        },
        py::arg("inputs"), py::arg("labels"), py::arg("num_classes"), py::arg("epochs") = 300,
        py::arg("lr") = TrainConfig{}.learning_rate, py::arg("momentum") = TrainConfig{}.momentum,
        py::arg("batch_size") = TrainConfig{}.batch_size, py::arg("seed") = 0, py::arg("sn") = true,
        py::arg("sn_coeff") = 1.0, py::arg("sn_iters") = TrainConfig{}.sn_power_iters,
        py::arg("hidden_dim") = 128, py::arg("num_blocks") = 4, py::arg("activation") = "relu",
        "Returns (model, per-epoch mean loss).");

    // grids
    m.def(
        "build_grid",
        [](const IpfField& field, const SnMlp* model, const std::string& mode) {
            const UncertaintyGrid g = build_grid(field, model, parse_grid_mode(mode));
            return py::dict(py::arg("x") = g.x_values, py::arg("y") = g.y_values, py::arg("psi") = g.psi);
        },
        py::arg("field"), py::arg("model") = nullptr, py::arg("mode") = "input",
        "psi[i, j] is the value at (x[j], y[i]) on the 100 x 100 viewport lattice.");
    m.def(
        "render_grid",
        [](const IpfField& field, const SnMlp* model, const std::string& mode, const std::filesystem::path& image,
           const std::filesystem::path& csv) {
            render(build_grid(field, model, parse_grid_mode(mode)), image, csv);
        },
        py::arg("field"), py::arg("model"), py::arg("mode"), py::arg("image_path"), py::arg("csv_path"));
}
