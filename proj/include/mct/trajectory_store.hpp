#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mct/expert_trainer.hpp"
#include "mct/model.hpp"
#include "mct/serialize.hpp"

namespace mct {

// Piecewise-convexified trajectory. Consecutive anchors bound segments; the
// waypoints of each segment are convex combinations of its two anchor
// checkpoints, positioned per parameter group by the beta table.
//
// beta is (K+1) x G. Row 0 is zero. For t in (a_j, a_j+1], row t holds the
// cumulative fraction of the segment's total step norm covered up to t, so
// every anchor row after the first holds exactly 1 (the end of the segment
// it closes). Within a segment, reading the start row as 0 gives a
// non-decreasing column in [0, 1].
struct ConvexTrajectory {
    ModelSpec spec;
    std::vector<int> anchors;                // a_0 = 0 < ... < a_m = K
    std::vector<ParamVector> anchor_params;  // one per anchor
    std::vector<std::vector<double>> beta;   // (K+1) x G
    int K = 0;

    size_t group_count() const { return anchor_params.empty() ? 0 : anchor_params.front().group_count(); }

    // index j of the segment [a_j, a_j+1] containing c
    int segment_of(double c) const {
        if (!(c >= 0.0 && c <= static_cast<double>(K)))
            throw ValueError(strfmt("timestep %g outside [0, %d]", c, K));
        for (size_t j = 0; j + 1 < anchors.size(); ++j)
            if (c < static_cast<double>(anchors[j + 1])) return static_cast<int>(j);
        return static_cast<int>(anchors.size()) - 2;
    }

    // beta value of integer timestep t read locally to segment j
    double beta_local(int j, int t, size_t group) const {
        if (t == anchors[static_cast<size_t>(j)]) return 0.0;
        return beta[static_cast<size_t>(t)][group];
    }
};

inline void validate_anchors(const std::vector<int>& anchors, int K) {
    if (anchors.size() < 2) throw ValueError("anchors: need at least {0, K}");
    if (anchors.front() != 0 || anchors.back() != K)
        throw ValueError(strfmt("anchors: must start at 0 and end at K=%d", K));
    for (size_t i = 0; i + 1 < anchors.size(); ++i)
        if (anchors[i] >= anchors[i + 1]) throw ValueError("anchors: must be strictly increasing");
}

// Convexify an expert buffer: per segment and per parameter group, beta at
// timestep t is the fraction of the segment's total step norm accumulated
// before t. Anchor parameters are copied from the buffer checkpoints.
inline ConvexTrajectory convexify(const MttBuffer& buf, const std::vector<int>& anchors) {
    buf.validate();
    const int K = buf.K();
    validate_anchors(anchors, K);
    const size_t G = buf.group_count();

    ConvexTrajectory traj;
    traj.spec = buf.spec;
    traj.anchors = anchors;
    traj.K = K;
    for (int a : anchors) traj.anchor_params.push_back(buf.checkpoints[static_cast<size_t>(a)]);
    traj.beta.assign(static_cast<size_t>(K) + 1, std::vector<double>(G, 0.0));

    for (size_t j = 0; j + 1 < anchors.size(); ++j) {
        const int lo = anchors[j], hi = anchors[j + 1];
        for (size_t g = 0; g < G; ++g) {
            double total = 0.0;
            for (int l = lo; l < hi; ++l) total += buf.delta_norms[static_cast<size_t>(l)][g];
            if (total == 0.0)
                throw ValueError(strfmt("degenerate trajectory: zero total step norm in group %zu on segment [%d, %d]",
                                        g, lo, hi));
            double cum = 0.0;
            for (int t = lo + 1; t <= hi; ++t) {
                cum += buf.delta_norms[static_cast<size_t>(t - 1)][g];
                traj.beta[static_cast<size_t>(t)][g] = cum / total;
            }
        }
    }
    return traj;
}

// Evaluate the trajectory at a fractional timestep c in [0, K]: interpolate
// beta between floor(c) and ceil(c), then mix the two anchor checkpoints of
// the containing segment groupwise.
inline ParamVector sample_continuous(const ConvexTrajectory& traj, double c) {
    const int j = traj.segment_of(c);
    const ParamVector& start = traj.anchor_params[static_cast<size_t>(j)];
    const ParamVector& end = traj.anchor_params[static_cast<size_t>(j) + 1];

    const int lo = static_cast<int>(std::floor(c));
    const int hi = static_cast<int>(std::ceil(c));
    const double eta = c - static_cast<double>(lo);

    ParamVector out = start;
    for (size_t g = 0; g < out.group_count(); ++g) {
        const double b_lo = traj.beta_local(j, lo, g);
        const double b_hi = traj.beta_local(j, hi, g);
        const double b = (1.0 - eta) * b_lo + eta * b_hi;
        const auto& sv = start.groups[g].value.data;
        const auto& ev = end.groups[g].value.data;
        auto& ov = out.groups[g].value.data;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = (1.0 - b) * sv[i] + b * ev[i];
    }
    return out;
}

// ---- binary formats ----
//
// Shared spec block: u32 input_dim, u32 num_hidden, u32 widths[num_hidden],
// u32 classes. All integers little-endian.
//
// MTT buffer file ("MTTB", version 1):
//   magic, u8 version, spec block, u32 K, u32 G,
//   group shape table (per group: u32 ndim, u32 dims[ndim]),
//   (K+1) checkpoints as f32 payload in group order,
//   K*G f64 delta norms, row-major.
//
// Convex file ("MCTB", version 1):
//   magic, u8 version, spec block, u32 K, u32 anchor_count,
//   u32 anchor timesteps, anchor payloads f32 in group order,
//   (K+1)*G f64 beta table, row-major.
// Payload layout follows the spec block's MLP group structure.

namespace detail {

inline void write_spec(ByteWriter& w, const ModelSpec& spec) {
    w.u32(static_cast<uint32_t>(spec.input_dim));
    w.u32(static_cast<uint32_t>(spec.hidden_widths.size()));
    for (int64_t h : spec.hidden_widths) w.u32(static_cast<uint32_t>(h));
    w.u32(static_cast<uint32_t>(spec.num_classes));
}

inline ModelSpec read_spec(ByteReader& r) {
    ModelSpec spec;
    spec.input_dim = r.u32();
    const uint32_t nh = r.u32();
    for (uint32_t i = 0; i < nh; ++i) spec.hidden_widths.push_back(r.u32());
    spec.num_classes = r.u32();
    return spec;
}

inline void write_payload_f32(ByteWriter& w, const ParamVector& params) {
    for (const auto& g : params.groups)
        for (double v : g.value.data) w.f32(static_cast<float>(v));
}

// group layout the spec block implies: per layer a [in, out] weight and a
// [1, out] bias
inline ParamVector mlp_layout(const ModelSpec& spec) {
    ParamVector layout;
    const auto dims = spec.layer_dims();
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        layout.groups.push_back({strfmt("fc%zu.w", l), Tensor::zeros({dims[l], dims[l + 1]})});
        layout.groups.push_back({strfmt("fc%zu.b", l), Tensor::zeros({1, dims[l + 1]})});
    }
    return layout;
}

inline ParamVector read_payload_f32(ByteReader& r, const ParamVector& layout) {
    ParamVector out = layout;
    for (auto& g : out.groups)
        for (double& v : g.value.data) v = static_cast<double>(r.f32());
    return out;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_buffer(const MttBuffer& buf) {
    buf.validate();
    ByteWriter w;
    w.magic("MTTB");
    w.u8(1);
    detail::write_spec(w, buf.spec);
    w.u32(static_cast<uint32_t>(buf.K()));
    w.u32(static_cast<uint32_t>(buf.group_count()));
    for (const auto& g : buf.checkpoints.front().groups) {
        w.u32(static_cast<uint32_t>(g.value.shape.size()));
        for (int64_t d : g.value.shape) w.u32(static_cast<uint32_t>(d));
    }
    for (const auto& chk : buf.checkpoints) detail::write_payload_f32(w, chk);
    for (const auto& row : buf.delta_norms)
        for (double v : row) w.f64(v);
    return w.buf;
}

inline MttBuffer deserialize_buffer(std::vector<uint8_t> bytes, const std::string& name) {
    ByteReader r(std::move(bytes), name);
    r.expect_magic("MTTB");
    const uint8_t version = r.u8();
    if (version != 1) throw FormatError(strfmt("%s: unsupported version %u", name.c_str(), version));

    MttBuffer buf;
    buf.spec = detail::read_spec(r);
    const uint32_t K = r.u32();
    const uint32_t G = r.u32();

    ParamVector layout;
    const ParamVector mlp = detail::mlp_layout(buf.spec);
    for (uint32_t g = 0; g < G; ++g) {
        const uint32_t ndim = r.u32();
        std::vector<int64_t> shape;
        for (uint32_t d = 0; d < ndim; ++d) shape.push_back(r.u32());
        const std::string gname =
            (G == mlp.group_count() && mlp.groups[g].value.shape == shape) ? mlp.groups[g].name : strfmt("g%u", g);
        layout.groups.push_back({gname, Tensor::zeros(shape)});
    }

    for (uint32_t k = 0; k <= K; ++k) buf.checkpoints.push_back(detail::read_payload_f32(r, layout));
    buf.delta_norms.assign(K, std::vector<double>(G, 0.0));
    for (uint32_t k = 0; k < K; ++k)
        for (uint32_t g = 0; g < G; ++g) buf.delta_norms[k][g] = r.f64();
    r.expect_end();
    buf.validate();
    return buf;
}

inline void write_buffer(const std::string& path, const MttBuffer& buf) { write_file(path, serialize_buffer(buf)); }

inline MttBuffer read_buffer(const std::string& path) { return deserialize_buffer(read_file(path), path); }

inline std::vector<uint8_t> serialize_convex(const ConvexTrajectory& traj) {
    const ParamVector layout = detail::mlp_layout(traj.spec);
    for (const auto& p : traj.anchor_params)
        if (!p.same_layout(layout))
            throw ValueError("convex file: parameter groups do not match the spec's MLP layout");
    ByteWriter w;
    w.magic("MCTB");
    w.u8(1);
    detail::write_spec(w, traj.spec);
    w.u32(static_cast<uint32_t>(traj.K));
    w.u32(static_cast<uint32_t>(traj.anchors.size()));
    for (int a : traj.anchors) w.u32(static_cast<uint32_t>(a));
    for (const auto& p : traj.anchor_params) detail::write_payload_f32(w, p);
    for (const auto& row : traj.beta)
        for (double v : row) w.f64(v);
    return w.buf;
}

inline ConvexTrajectory deserialize_convex(std::vector<uint8_t> bytes, const std::string& name) {
    ByteReader r(std::move(bytes), name);
    r.expect_magic("MCTB");
    const uint8_t version = r.u8();
    if (version != 1) throw FormatError(strfmt("%s: unsupported version %u", name.c_str(), version));

    ConvexTrajectory traj;
    traj.spec = detail::read_spec(r);
    traj.K = static_cast<int>(r.u32());
    const uint32_t na = r.u32();
    for (uint32_t i = 0; i < na; ++i) traj.anchors.push_back(static_cast<int>(r.u32()));
    validate_anchors(traj.anchors, traj.K);

    const ParamVector layout = detail::mlp_layout(traj.spec);
    for (uint32_t i = 0; i < na; ++i) traj.anchor_params.push_back(detail::read_payload_f32(r, layout));
    const size_t G = layout.group_count();
    traj.beta.assign(static_cast<size_t>(traj.K) + 1, std::vector<double>(G, 0.0));
    for (int t = 0; t <= traj.K; ++t)
        for (size_t g = 0; g < G; ++g) traj.beta[static_cast<size_t>(t)][g] = r.f64();
    r.expect_end();
    return traj;
}

inline void write_convex(const std::string& path, const ConvexTrajectory& traj) {
    write_file(path, serialize_convex(traj));
}

inline ConvexTrajectory read_convex(const std::string& path) { return deserialize_convex(read_file(path), path); }

// ---- storage accounting ----

struct StorageReport {
    uint64_t bytes_mtt = 0;
    uint64_t bytes_conv = 0;
    double ratio = 0.0;
    int K = 0;
    int64_t param_count = 0;  // W
    int64_t beta_entries = 0;
};

inline StorageReport storage_report(const MttBuffer& buf, const ConvexTrajectory& traj) {
    StorageReport rep;
    rep.bytes_mtt = serialize_buffer(buf).size();
    rep.bytes_conv = serialize_convex(traj).size();
    rep.ratio = static_cast<double>(rep.bytes_conv) / static_cast<double>(rep.bytes_mtt);
    rep.K = buf.K();
    rep.param_count = buf.checkpoints.front().param_count();
    rep.beta_entries = static_cast<int64_t>(traj.beta.size()) * static_cast<int64_t>(traj.group_count());
    return rep;
}

inline StorageReport storage_report_files(const std::string& mtt_path, const std::string& convex_path) {
    MttBuffer buf = read_buffer(mtt_path);
    ConvexTrajectory traj = read_convex(convex_path);
    StorageReport rep = storage_report(buf, traj);
    rep.bytes_mtt = std::filesystem::file_size(mtt_path);
    rep.bytes_conv = std::filesystem::file_size(convex_path);
    rep.ratio = static_cast<double>(rep.bytes_conv) / static_cast<double>(rep.bytes_mtt);
    return rep;
}

}  // namespace mct
