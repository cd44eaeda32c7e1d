#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aepm/ablation.hpp"
#include "aepm/attention_analysis.hpp"
#include "aepm/checkpoint.hpp"
#include "aepm/evaluate.hpp"
#include "aepm/losses.hpp"
#include "aepm/model.hpp"
#include "aepm/motion.hpp"
#include "aepm/run_config.hpp"
#include "aepm/train.hpp"

namespace py = pybind11;
using namespace aepm;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int64_t> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
    Tensor t;
    t.resize(shape);
    std::memcpy(t.data(), arr.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return arr;
}

PredictionSet prediction_set_from_array(const py::array_t<double>& predictions) {
    PredictionSet pred;
    pred.predictions = tensor_from_array(predictions);
    return pred;
}

} // namespace

PYBIND11_MODULE(_aepm, m) {
    m.doc() = "Probabilistic knee-angle estimation from whole-body joint angles";

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("joints", &ModelConfig::joints)
        .def_readwrite("frames", &ModelConfig::frames)
        .def_readwrite("embed_dim", &ModelConfig::embed_dim)
        .def_readwrite("layer_pairs", &ModelConfig::layer_pairs)
        .def_readwrite("samples", &ModelConfig::samples)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("mlp_hidden", &ModelConfig::mlp_hidden)
        .def_readwrite("pre_norm", &ModelConfig::pre_norm)
        .def_readwrite("squared_norm_loss", &ModelConfig::squared_norm_loss)
        .def("validate", &ModelConfig::validate)
        .def_static("h36m", &ModelConfig::h36m)
        .def_static("cmu", &ModelConfig::cmu);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("stage_shift_epoch", &TrainConfig::stage_shift_epoch)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("window_stride", &TrainConfig::window_stride)
        .def_readwrite("seed", &TrainConfig::seed);

    py::class_<ModelParameters>(m, "ModelParameters")
        .def_readonly("config", &ModelParameters::config)
        .def("count", [](const ModelParameters& p) { return parameter_count(p); });

    py::class_<MotionSequence>(m, "MotionSequence")
        .def(py::init<>())
        .def_readwrite("frame_rate", &MotionSequence::frame_rate)
        .def_readwrite("joint_names", &MotionSequence::joint_names)
        .def_readwrite("scenario_label", &MotionSequence::scenario_label)
        .def_property(
            "convention",
            [](const MotionSequence& s) { return to_string(s.convention); },
            [](MotionSequence& s, const std::string& tag) { s.convention = convention_from_string(tag); })
        .def_property(
            "frames", [](const MotionSequence& s) { return array_from_tensor(s.frames); },
            [](MotionSequence& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
                s.frames = tensor_from_array(a);
            })
        .def("num_frames", &MotionSequence::num_frames)
        .def("joint_index", &MotionSequence::joint_index);

    m.def("init_parameters", &init_parameters, py::arg("config"), py::arg("seed"));
    m.def("save_checkpoint",
          [](const std::string& path, const ModelParameters& p) { save_checkpoint(path, p); });
    m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path); });

    m.def(
        "forward",
        [](const ModelParameters& params,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_bar,
           bool capture) {
            AttentionRecord record;
            PredictionSet pred = forward(tensor_from_array(x_bar), params,
                                         capture ? Capture::spatial_and_temporal : Capture::none,
                                         capture ? &record : nullptr);
            py::dict out;
            out["mu"] = array_from_tensor(pred.mu);
            out["sigma"] = array_from_tensor(pred.sigma);
            out["samples"] = array_from_tensor(pred.samples);
            out["predictions"] = array_from_tensor(pred.predictions);
            if (capture) {
                py::list spatial, temporal;
                for (const auto& w : record.spatial) spatial.append(array_from_tensor(w));
                for (const auto& w : record.temporal) temporal.append(array_from_tensor(w));
                out["attention_spatial"] = spatial;
                out["attention_temporal"] = temporal;
            }
            return out;
        },
        py::arg("params"), py::arg("x_bar"), py::arg("capture") = false);

    m.def(
        "loss_stage1",
        [](const py::array_t<double>& predictions, const py::array_t<double>& x, bool squared) {
            return loss_stage1(prediction_set_from_array(predictions), tensor_from_array(x), squared);
        },
        py::arg("predictions"), py::arg("x"), py::arg("squared") = false);
    m.def(
        "loss_stage2",
        [](const py::array_t<double>& predictions, const py::array_t<double>& x, bool squared) {
            return loss_stage2(prediction_set_from_array(predictions), tensor_from_array(x), squared);
        },
        py::arg("predictions"), py::arg("x"), py::arg("squared") = false);

    m.def("parse_motion_csv", &parse_motion_csv);
    m.def("write_motion_csv", &write_motion_csv);
    m.def("downsample", &downsample);
    m.def("select_joints", &select_joints);
    m.def("synth_gait_json",
          [](const std::string& json_text) { return synth_gait(synth_spec_from_text(json_text)); },
          py::arg("spec_json"));

    m.def(
        "train",
        [](const ModelConfig& mc, const TrainConfig& tc, const std::vector<MotionSequence>& train_seqs,
           const std::vector<MotionSequence>& val_seqs, int masked_joint, int flexion_channel) {
            TrainDataset ds;
            ds.train_sequences = train_seqs;
            ds.validation_sequences = val_seqs;
            ds.masked_joint = masked_joint;
            ds.eval.flexion_channel = flexion_channel;
            TrainResult r = train(mc, tc, ds);
            py::list log;
            for (const auto& rep : r.log) {
                py::dict d;
                d["epoch"] = rep.epoch;
                d["stage"] = std::string(to_string(rep.stage));
                d["train_loss"] = rep.train_loss;
                d["val_rmse_deg"] = rep.val_rmse_deg;
                log.append(d);
            }
            return py::make_tuple(r.params, log);
        },
        py::arg("model_config"), py::arg("train_config"), py::arg("train_sequences"),
        py::arg("validation_sequences"), py::arg("masked_joint"), py::arg("flexion_channel") = 0);

    m.def(
        "evaluate",
        [](const ModelParameters& params, const std::vector<MotionSequence>& seqs, int masked_joint,
           int flexion_channel) {
            EvalOptions opts;
            opts.flexion_channel = flexion_channel;
            auto report = scenario_report(params, seqs, masked_joint, opts);
            py::list rows;
            for (const auto& r : report) {
                py::dict d;
                d["scenario"] = r.label;
                d["frames"] = r.frames;
                d["mean_rmse_deg"] = r.mean_rmse_deg;
                d["best_rmse_deg"] = r.best_rmse_deg;
                d["mean_sigma_deg"] = r.mean_sigma_deg;
                rows.append(d);
            }
            return rows;
        },
        py::arg("params"), py::arg("sequences"), py::arg("masked_joint"),
        py::arg("flexion_channel") = 0);

    m.def(
        "grad_check",
        [](const ModelConfig& cfg, uint64_t seed, double step, int coords) {
            GradCheckResult r = grad_check(cfg, seed, step, coords);
            py::dict d;
            d["max_rel_error_s1"] = r.max_rel_error_s1;
            d["max_rel_error_s2"] = r.max_rel_error_s2;
            d["max_rel_error"] = r.max_rel_error();
            return d;
        },
        py::arg("config"), py::arg("seed"), py::arg("step") = 1e-4, py::arg("coords_per_group") = 200);

    m.def(
        "gait_attention_series",
        [](const ModelParameters& params, const MotionSequence& seq, int masked_joint,
           int flexion_channel) {
            EvalOptions opts;
            opts.flexion_channel = flexion_channel;
            GaitAttentionSeries s = gait_attention_series(params, seq, masked_joint, opts);
            py::dict d;
            d["joint_names"] = s.joint_names;
            d["truth_deg"] = s.truth_deg;
            d["pred_deg"] = s.pred_deg;
            d["weights"] = array_from_tensor(s.weights);
            return d;
        },
        py::arg("params"), py::arg("sequence"), py::arg("masked_joint"),
        py::arg("flexion_channel") = 0);
}
