#pragma once

// Cohort and effect-surface CSV files, plus number formatting shared by the
// reports. Doubles are written in shortest round-trip form.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/survival_ite.hpp"

namespace survhte::harness {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    out.push_back(cell);
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }
    return out;
}

template <typename T>
T parse_field(const std::string& text, std::size_t row, const std::string& column) {
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ValidationError(row, "numeric field", "column '" + column + "' has value '" + text + "'");
    return v;
}

/// Next line that is not a '#' comment.
inline bool next_record(std::istream& in, std::string& line) {
    while (std::getline(in, line))
        if (line.empty() || line[0] != '#') return true;
    return false;
}

inline std::ofstream open_out(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
}

}  // namespace detail

/// Reads cohort rows from CSV text with header id,time,event,treatment and
/// one column per covariate. Rows are validated against the cohort rules.
inline Cohort parse_cohort_csv(std::istream& in, int horizon) {
    std::string line;
    if (!detail::next_record(in, line)) throw ValidationError(0, "header row present");
    const auto header = detail::split_csv_line(line);
    auto column = [&](const std::string& name) -> std::size_t {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        throw ValidationError(0, "required column present", "missing column '" + name + "'");
    };
    const std::size_t c_id = column("id"), c_time = column("time"), c_event = column("event"),
                      c_trt = column("treatment");
    std::vector<std::size_t> c_x;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < header.size(); ++k)
        if (k != c_id && k != c_time && k != c_event && k != c_trt) {
            c_x.push_back(k);
            names.push_back(header[k]);
        }
    std::vector<RawRow> rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ValidationError(row, "field count matches header",
                                  std::to_string(cells.size()) + " fields, expected " + std::to_string(header.size()));
        RawRow r;
        r.id = cells[c_id];
        r.time = detail::parse_field<long long>(cells[c_time], row, "time");
        r.event = detail::parse_field<long long>(cells[c_event], row, "event");
        r.treatment = detail::parse_field<long long>(cells[c_trt], row, "treatment");
        for (std::size_t k = 0; k < c_x.size(); ++k) r.x.push_back(detail::parse_field<double>(cells[c_x[k]], row, names[k]));
        rows.push_back(std::move(r));
    }
    return validate_cohort(rows, horizon, names);
}

inline Cohort read_cohort_csv(const std::string& path, int horizon) {
    std::ifstream in(path);
    if (!in) throw ValidationError(0, "input file readable", path);
    return parse_cohort_csv(in, horizon);
}

/// Lines starting with '#' are comments; writers put the config hash there.
inline void write_cohort_csv(std::ostream& out, const Cohort& cohort, const std::string& comment = {}) {
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "id,time,event,treatment";
    for (const auto& name : cohort.feature_names) out << ',' << name;
    out << '\n';
    for (const auto& s : cohort.subjects) {
        out << s.id << ',' << s.t_obs << ',' << s.y << ',' << s.a;
        for (double v : s.x) out << ',' << format_double(v);
        out << '\n';
    }
}

inline void write_cohort_csv(const std::string& path, const Cohort& cohort, const std::string& comment = {}) {
    auto out = detail::open_out(path);
    write_cohort_csv(out, cohort, comment);
}

/// Long format: id,t,s1,s0,psi.
inline void write_surface_csv(std::ostream& out, const EffectSurface& surface, const std::string& comment = {}) {
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "id,t,s1,s0,psi\n";
    for (std::size_t i = 0; i < surface.n; ++i)
        for (int t = 1; t <= surface.horizon; ++t) {
            const std::size_t k = i * static_cast<std::size_t>(surface.horizon) + static_cast<std::size_t>(t - 1);
            out << surface.ids[i] << ',' << t << ',' << format_double(surface.s1[k]) << ',' << format_double(surface.s0[k])
                << ',' << format_double(surface.psi_hat[k]) << '\n';
        }
}

inline void write_surface_csv(const std::string& path, const EffectSurface& surface, const std::string& comment = {}) {
    auto out = detail::open_out(path);
    write_surface_csv(out, surface, comment);
}

/// Reads a surface written by write_surface_csv. Rows must be grouped by id
/// with t = 1..H in order.
inline EffectSurface parse_surface_csv(std::istream& in) {
    std::string line;
    if (!detail::next_record(in, line)) throw ValidationError(0, "header row present");
    const auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"id", "t", "s1", "s0", "psi"})
        throw ValidationError(0, "surface header is id,t,s1,s0,psi");
    EffectSurface s;
    s.horizon = 0;  // set by the first complete id
    int expected_t = 1;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        ++row;
        const auto c = detail::split_csv_line(line);
        if (c.size() != 5) throw ValidationError(row, "field count matches header");
        const int t = detail::parse_field<int>(c[1], row, "t");
        if (t == 1) {
            if (!s.ids.empty() && s.horizon == 0) s.horizon = expected_t - 1;
            if (!s.ids.empty() && expected_t - 1 != s.horizon) throw ValidationError(row, "every id covers t = 1..H");
            s.ids.push_back(c[0]);
            expected_t = 1;
        }
        if (s.ids.empty() || t != expected_t || c[0] != s.ids.back())
            throw ValidationError(row, "rows grouped by id with t = 1..H in order");
        ++expected_t;
        s.s1.push_back(detail::parse_field<double>(c[2], row, "s1"));
        s.s0.push_back(detail::parse_field<double>(c[3], row, "s0"));
        s.psi_hat.push_back(detail::parse_field<double>(c[4], row, "psi"));
    }
    if (s.ids.empty()) throw ValidationError(0, "surface has rows");
    if (s.horizon == 0) s.horizon = expected_t - 1;
    if (expected_t - 1 != s.horizon) throw ValidationError(row, "every id covers t = 1..H");
    s.n = s.ids.size();
    return s;
}

inline EffectSurface read_surface_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(0, "input file readable", path);
    return parse_surface_csv(in);
}

inline void write_text(const std::string& path, const std::string& text) {
    auto out = detail::open_out(path);
    out << text;
}

}  // namespace survhte::harness
