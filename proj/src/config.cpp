#include "anatpose/config.hpp"

#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "anatpose/io.hpp"

namespace anatpose::io {

using nlohmann::json;

namespace {

json parse_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("failed to parse ") + what + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* context) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument(std::string(context) + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json_text(const std::string& text, const TrainConfig& defaults) {
  const json j = parse_text(text, "train config");
  reject_unknown(j,
                 {"lambda1", "lambda2", "ramp_epochs", "ema_momentum", "epochs", "lr",
                  "weight_decay", "batch_source", "batch_target", "subsample_points",
                  "filter_mode", "mask_mode", "seed", "penalty", "ramp_kind", "augment", "model",
                  "diagnostics_dir"},
                 "train config");
  TrainConfig c = defaults;
  maybe(j, "lambda1", c.lambda1);
  maybe(j, "lambda2", c.lambda2);
  maybe(j, "ramp_epochs", c.ramp_epochs);
  maybe(j, "ema_momentum", c.ema_momentum);
  maybe(j, "epochs", c.epochs);
  maybe(j, "lr", c.lr);
  maybe(j, "weight_decay", c.weight_decay);
  maybe(j, "batch_source", c.batch_source);
  maybe(j, "batch_target", c.batch_target);
  maybe(j, "subsample_points", c.subsample_points);
  maybe(j, "seed", c.seed);
  maybe(j, "diagnostics_dir", c.diagnostics_dir);
  if (j.contains("filter_mode")) c.filter_mode = parse_filter_mode(j.at("filter_mode"));
  if (j.contains("mask_mode")) c.mask_mode = parse_mask_mode(j.at("mask_mode"));
  if (j.contains("penalty")) {
    const std::string p = j.at("penalty");
    if (p == "l1") {
      c.penalty = PenaltyKind::L1;
    } else if (p == "l2") {
      c.penalty = PenaltyKind::L2;
    } else {
      throw std::invalid_argument("train config: penalty must be 'l1' or 'l2'");
    }
  }
  if (j.contains("ramp_kind")) c.ramp_kind = parse_ramp_kind(j.at("ramp_kind"));
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    reject_unknown(a, {"max_rotation_deg", "max_translation"}, "augment");
    maybe(a, "max_rotation_deg", c.augment.max_rotation_deg);
    maybe(a, "max_translation", c.augment.max_translation);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"joints", "enc_hidden", "enc_feat", "dec_hidden", "leak", "norm_eps",
                       "norm_momentum"},
                   "model");
    maybe(m, "joints", c.model.joints);
    maybe(m, "enc_hidden", c.model.enc_hidden);
    maybe(m, "enc_feat", c.model.enc_feat);
    maybe(m, "dec_hidden", c.model.dec_hidden);
    maybe(m, "leak", c.model.leak);
    maybe(m, "norm_eps", c.model.norm_eps);
    maybe(m, "norm_momentum", c.model.norm_momentum);
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults) {
  return train_config_from_json_text(read_text_file(path), defaults);
}

std::string train_config_to_json_text(const TrainConfig& c) {
  json j;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["ramp_epochs"] = c.ramp_epochs;
  j["ema_momentum"] = c.ema_momentum;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_source"] = c.batch_source;
  j["batch_target"] = c.batch_target;
  j["subsample_points"] = c.subsample_points;
  j["filter_mode"] = to_string(c.filter_mode);
  j["mask_mode"] = to_string(c.mask_mode);
  j["seed"] = c.seed;
  j["penalty"] = c.penalty == PenaltyKind::L1 ? "l1" : "l2";
  j["ramp_kind"] = to_string(c.ramp_kind);
  j["augment"] = {{"max_rotation_deg", c.augment.max_rotation_deg},
                  {"max_translation", c.augment.max_translation}};
  j["model"] = {{"joints", c.model.joints},         {"enc_hidden", c.model.enc_hidden},
                {"enc_feat", c.model.enc_feat},     {"dec_hidden", c.model.dec_hidden},
                {"leak", c.model.leak},             {"norm_eps", c.model.norm_eps},
                {"norm_momentum", c.model.norm_momentum}};
  return j.dump(2) + "\n";
}

GenConfig gen_config_from_json_text(const std::string& text) {
  const json j = parse_text(text, "gen config");
  reject_unknown(j,
                 {"counts", "points_per_bone", "surface_noise", "scale_lo", "scale_hi",
                  "bone_jitter", "subjects_per_split", "sym_tol", "bounds_margin", "shift", "seed"},
                 "gen config");
  GenConfig c;
  if (j.contains("counts")) {
    const json& n = j.at("counts");
    reject_unknown(n, {"source_train", "target_train", "target_val", "target_test"}, "counts");
    maybe(n, "source_train", c.counts.source_train);
    maybe(n, "target_train", c.counts.target_train);
    maybe(n, "target_val", c.counts.target_val);
    maybe(n, "target_test", c.counts.target_test);
  }
  maybe(j, "points_per_bone", c.points_per_bone);
  maybe(j, "surface_noise", c.surface_noise);
  maybe(j, "scale_lo", c.scale_lo);
  maybe(j, "scale_hi", c.scale_hi);
  maybe(j, "bone_jitter", c.bone_jitter);
  maybe(j, "subjects_per_split", c.subjects_per_split);
  maybe(j, "sym_tol", c.sym_tol);
  maybe(j, "bounds_margin", c.bounds_margin);
  maybe(j, "seed", c.seed);
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    reject_unknown(s,
                   {"mode", "cover_offset", "cover_smoothing", "cover_noise", "sensor_noise",
                    "sensor_plane_normal", "sensor_plane_offset", "clutter_count", "clutter_min",
                    "clutter_max", "headboard_count", "headboard_min", "headboard_max"},
                   "shift");
    if (s.contains("mode")) c.shift.mode = parse_shift_mode(s.at("mode"));
    maybe(s, "cover_offset", c.shift.cover_offset);
    maybe(s, "cover_smoothing", c.shift.cover_smoothing);
    maybe(s, "cover_noise", c.shift.cover_noise);
    maybe(s, "sensor_noise", c.shift.sensor_noise);
    maybe(s, "sensor_plane_offset", c.shift.sensor_plane_offset);
    maybe(s, "clutter_count", c.shift.clutter_count);
    maybe(s, "headboard_count", c.shift.headboard_count);
    auto vec3 = [&s](const char* key, Vec3& out) {
      if (!s.contains(key)) return;
      const json& a = s.at(key);
      if (!a.is_array() || a.size() != 3) {
        throw std::invalid_argument(std::string("shift: ") + key + " must be [x, y, z]");
      }
      out = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    vec3("sensor_plane_normal", c.shift.sensor_plane_normal);
    vec3("clutter_min", c.shift.clutter_min);
    vec3("clutter_max", c.shift.clutter_max);
    vec3("headboard_min", c.shift.headboard_min);
    vec3("headboard_max", c.shift.headboard_max);
  }
  return c;
}

GenConfig load_gen_config(const std::filesystem::path& path) {
  return gen_config_from_json_text(read_text_file(path));
}

std::string gen_config_to_json_text(const GenConfig& c) {
  json j;
  j["counts"] = {{"source_train", c.counts.source_train},
                 {"target_train", c.counts.target_train},
                 {"target_val", c.counts.target_val},
                 {"target_test", c.counts.target_test}};
  j["points_per_bone"] = c.points_per_bone;
  j["surface_noise"] = c.surface_noise;
  j["scale_lo"] = c.scale_lo;
  j["scale_hi"] = c.scale_hi;
  j["bone_jitter"] = c.bone_jitter;
  j["subjects_per_split"] = c.subjects_per_split;
  j["sym_tol"] = c.sym_tol;
  j["bounds_margin"] = c.bounds_margin;
  j["seed"] = c.seed;
  j["shift"] = {{"mode", to_string(c.shift.mode)},
                {"cover_offset", c.shift.cover_offset},
                {"cover_smoothing", c.shift.cover_smoothing},
                {"cover_noise", c.shift.cover_noise},
                {"sensor_noise", c.shift.sensor_noise},
                {"sensor_plane_normal",
                 {c.shift.sensor_plane_normal[0], c.shift.sensor_plane_normal[1],
                  c.shift.sensor_plane_normal[2]}},
                {"sensor_plane_offset", c.shift.sensor_plane_offset},
                {"clutter_count", c.shift.clutter_count},
                {"clutter_min", {c.shift.clutter_min[0], c.shift.clutter_min[1], c.shift.clutter_min[2]}},
                {"clutter_max", {c.shift.clutter_max[0], c.shift.clutter_max[1], c.shift.clutter_max[2]}},
                {"headboard_count", c.shift.headboard_count},
                {"headboard_min",
                 {c.shift.headboard_min[0], c.shift.headboard_min[1], c.shift.headboard_min[2]}},
                {"headboard_max",
                 {c.shift.headboard_max[0], c.shift.headboard_max[1], c.shift.headboard_max[2]}}};
  return j.dump(2) + "\n";
}

}  // namespace anatpose::io
