#include "mpibench/json_io.hpp"

#include <fstream>
#include <sstream>

namespace mpibench {

StrictObject::StrictObject(const json& j, std::string path) : obj_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("field '" + (path_.empty() ? std::string("<root>") : path_) + "' must be an object");
}

const json& StrictObject::raw(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required field '" + field(key) + "'");
    seen_.insert(key);
    return (*obj_)[key];
}

StrictObject StrictObject::child(const std::string& key) { return StrictObject(raw(key), field(key)); }

std::optional<StrictObject> StrictObject::optional_child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return child(key);
}

void StrictObject::finish() const {
    for (const auto& [key, value] : obj_->items()) {
        if (!seen_.count(key)) throw ConfigError("unknown field '" + field(key) + "'");
    }
}

json grid_to_json(const GridSpec& g) {
    return {{"shape", {g.dims.nx, g.dims.ny, g.dims.nz}}, {"fov_mm", g.fov}, {"origin_mm", g.origin}};
}

GridSpec grid_from_json(const json& j, const std::string& path) {
    StrictObject o(j, path);
    GridSpec g;
    const auto shape = o.optional<std::array<std::size_t, 3>>("shape", {g.dims.nx, g.dims.ny, g.dims.nz});
    g.dims = {shape[0], shape[1], shape[2]};
    g.fov = o.optional<Vec3>("fov_mm", g.fov);
    // Default origin centres the field of view.
    g.origin = o.optional<Vec3>("origin_mm", Vec3{-g.fov[0] / 2, -g.fov[1] / 2, -g.fov[2] / 2});
    o.finish();
    try {
        g.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return g;
}

json phantom_to_json(const PhantomSpec& p) {
    json j{{"kind", to_string(p.kind)}, {"tracer_value", p.tracer_value}};
    switch (p.kind) {
        case PhantomKind::cone:
            j["tip_radius"] = p.cone.tip_radius;
            j["apex_angle_deg"] = p.cone.apex_angle_deg;
            j["height"] = p.cone.height;
            j["tip_mm"] = p.cone.tip;
            j["axis"] = p.cone.axis;
            break;
        case PhantomKind::five_tube:
            j["tube_radius"] = p.tubes.tube_radius;
            j["length"] = p.tubes.length;
            j["origin_mm"] = p.tubes.origin;
            j["in_plane_deg"] = p.tubes.in_plane_deg;
            j["out_of_plane_deg"] = p.tubes.out_of_plane_deg;
            break;
        case PhantomKind::cuboid_union: {
            json boxes = json::array();
            for (const auto& b : p.boxes) boxes.push_back({{"lo_mm", b.lo}, {"hi_mm", b.hi}});
            j["boxes"] = boxes;
            break;
        }
    }
    return j;
}

PhantomSpec phantom_from_json(const json& j, const std::string& path) {
    StrictObject o(j, path);
    PhantomSpec p;
    p.kind = phantom_kind_from_string(o.required<std::string>("kind"));
    p.tracer_value = o.optional<double>("tracer_value", p.tracer_value);
    switch (p.kind) {
        case PhantomKind::cone:
            p.cone.tip_radius = o.optional<double>("tip_radius", p.cone.tip_radius);
            p.cone.apex_angle_deg = o.optional<double>("apex_angle_deg", p.cone.apex_angle_deg);
            p.cone.height = o.optional<double>("height", p.cone.height);
            p.cone.tip = o.optional<Vec3>("tip_mm", p.cone.tip);
            p.cone.axis = o.optional<Vec3>("axis", p.cone.axis);
            break;
        case PhantomKind::five_tube:
            p.tubes.tube_radius = o.optional<double>("tube_radius", p.tubes.tube_radius);
            p.tubes.length = o.optional<double>("length", p.tubes.length);
            p.tubes.origin = o.optional<Vec3>("origin_mm", p.tubes.origin);
            p.tubes.in_plane_deg = o.optional<std::array<double, 2>>("in_plane_deg", p.tubes.in_plane_deg);
            p.tubes.out_of_plane_deg = o.optional<std::array<double, 2>>("out_of_plane_deg", p.tubes.out_of_plane_deg);
            break;
        case PhantomKind::cuboid_union: {
            const json& boxes = o.raw("boxes");
            if (!boxes.is_array()) throw ConfigError("field '" + o.field("boxes") + "' must be an array");
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                StrictObject b(boxes[i], o.field("boxes") + "[" + std::to_string(i) + "]");
                p.boxes.push_back({b.required<Vec3>("lo_mm"), b.required<Vec3>("hi_mm")});
                b.finish();
            }
            break;
        }
    }
    o.finish();
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return p;
}

json operator_to_json(const OperatorModel& m) {
    json j{{"kind", to_string(m.kind)}};
    if (m.kind == OperatorKind::spectral) {
        j["beta"] = m.spectral.beta;
        j["scale"] = m.spectral.scale;
        j["frequencies_per_coil"] = m.spectral.frequencies_per_coil;
        j["first_frequency"] = m.spectral.first_frequency;
    } else {
        const auto& l = m.langevin;
        j["drive_amplitude_mT"] = l.drive_amplitude_mT;
        j["gradient_T_per_m"] = l.gradient_T_per_m;
        j["frequency_ratios"] = l.frequency_ratios;
        j["kappa"] = l.kappa;
        j["samples_per_period"] = l.samples_per_period;
        j["max_frequency"] = l.max_frequency;
    }
    return j;
}

OperatorModel operator_from_json(const json& j, const std::string& path) {
    StrictObject o(j, path);
    OperatorModel m;
    const auto kind = o.required<std::string>("kind");
    if (kind == "spectral") {
        m.kind = OperatorKind::spectral;
        auto& s = m.spectral;
        s.beta = o.optional<double>("beta", s.beta);
        s.scale = o.optional<double>("scale", s.scale);
        s.frequencies_per_coil = o.optional<std::size_t>("frequencies_per_coil", s.frequencies_per_coil);
        s.first_frequency = o.optional<std::size_t>("first_frequency", s.first_frequency);
    } else if (kind == "langevin") {
        m.kind = OperatorKind::langevin;
        auto& l = m.langevin;
        l.drive_amplitude_mT = o.optional<Vec3>("drive_amplitude_mT", l.drive_amplitude_mT);
        l.gradient_T_per_m = o.optional<Vec3>("gradient_T_per_m", l.gradient_T_per_m);
        l.frequency_ratios = o.optional<std::array<int, 3>>("frequency_ratios", l.frequency_ratios);
        l.kappa = o.optional<double>("kappa", l.kappa);
        l.samples_per_period = o.optional<std::size_t>("samples_per_period", l.samples_per_period);
        l.max_frequency = o.optional<std::size_t>("max_frequency", l.max_frequency);
    } else {
        throw ConfigError("field '" + o.field("kind") + "' must be 'spectral' or 'langevin'");
    }
    o.finish();
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return m;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
}

}  // namespace mpibench
