#include "mobilex/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mobilex/errors.hpp"

namespace mobilex {

void ParetoPoint::validate() const {
    if (!std::isfinite(error) || !std::isfinite(time_ms) || error <= 0.0 || time_ms <= 0.0) {
        throw DataError("pareto point '" + label + "': error and time must be finite and > 0");
    }
}

ParetoResult pareto_front(const std::vector<ParetoPoint>& points) {
    if (points.empty()) throw DataError("pareto: empty point set");
    for (const auto& p : points) p.validate();

    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a].time_ms != points[b].time_ms) return points[a].time_ms < points[b].time_ms;
        return points[a].error < points[b].error;
    });

    std::vector<bool> on_front(points.size(), false);
    double best_before = std::numeric_limits<double>::infinity();  // strictly earlier time
    std::size_t i = 0;
    while (i < order.size()) {
        // one group of equal time_ms at a time
        std::size_t j = i;
        while (j < order.size() && points[order[j]].time_ms == points[order[i]].time_ms) ++j;
        const double group_min = points[order[i]].error;
        for (std::size_t k = i; k < j; ++k) {
            const double e = points[order[k]].error;
            // dominated by a faster point at no worse error, or by a same-time
            // point at strictly lower error
            on_front[order[k]] = !(best_before <= e || group_min < e);
        }
        best_before = std::min(best_before, group_min);
        i = j;
    }

    ParetoResult result;
    for (std::size_t k : order) {
        if (on_front[k]) result.front.push_back(points[k]);
    }
    for (std::size_t k = 0; k < points.size(); ++k) {
        if (!on_front[k]) result.dominated.push_back(points[k]);
    }
    return result;
}

std::vector<ParetoPoint> read_pareto_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::vector<ParetoPoint> points;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("label,", 0) == 0) continue;  // header
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected 'label,error,time_ms'");
        }
        ParetoPoint p;
        p.label = line.substr(0, c1);
        try {
            p.error = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
            p.time_ms = std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad number");
        }
        p.validate();
        points.push_back(std::move(p));
    }
    if (points.empty()) throw DataError(path + ": no data rows");
    return points;
}

void write_pareto_csv(const std::string& path, const std::vector<ParetoPoint>& points) {
    std::ofstream out(path);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << "label,error,time_ms\n";
    for (const auto& p : points) {
        std::ostringstream row;
        row.precision(12);
        row << p.label << ',' << p.error << ',' << p.time_ms << '\n';
        out << row.str();
    }
}

std::string render_pareto_svg(const std::vector<ParetoPoint>& all,
                              const std::vector<ParetoPoint>& front) {
    if (all.empty()) throw DataError("pareto svg: no points");
    const double width = 640, height = 480, margin = 60;
    double tmin = all[0].time_ms, tmax = tmin, emin = all[0].error, emax = emin;
    for (const auto& p : all) {
        tmin = std::min(tmin, p.time_ms);
        tmax = std::max(tmax, p.time_ms);
        emin = std::min(emin, p.error);
        emax = std::max(emax, p.error);
    }
    if (tmax == tmin) tmax = tmin + 1;
    if (emax == emin) emax = emin + 1;
    const auto sx = [&](double t) {
        return margin + (t - tmin) / (tmax - tmin) * (width - 2 * margin);
    };
    const auto sy = [&](double e) {
        return height - margin - (e - emin) / (emax - emin) * (height - 2 * margin);
    };

    std::ostringstream svg;
    svg.precision(6);
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
        << "  <line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
        << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n"
        << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << width / 2 << "\" y=\"" << height - margin / 3
        << "\" text-anchor=\"middle\" font-size=\"14\">time (ms)</text>\n"
        << "  <text x=\"" << margin / 3 << "\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 " << margin / 3
        << " " << height / 2 << ")\">error</text>\n";

    if (front.size() > 1) {
        svg << "  <polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : front) svg << sx(p.time_ms) << ',' << sy(p.error) << ' ';
        svg << "\"/>\n";
    }
    for (const auto& p : all) {
        const bool is_front =
            std::any_of(front.begin(), front.end(), [&](const ParetoPoint& q) {
                return q.label == p.label && q.error == p.error && q.time_ms == p.time_ms;
            });
        svg << "  <circle cx=\"" << sx(p.time_ms) << "\" cy=\"" << sy(p.error) << "\" r=\""
            << (is_front ? 5 : 3) << "\" fill=\"" << (is_front ? "#d62728" : "#1f77b4")
            << "\"/>\n"
            << "  <text x=\"" << sx(p.time_ms) + 7 << "\" y=\"" << sy(p.error) - 5
            << "\" font-size=\"11\">" << p.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mobilex
