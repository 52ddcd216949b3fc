#include "printloop/gcode.hpp"
#include "printloop/util.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

namespace printloop::gcode {

namespace {

bool parse_number(std::string_view text, double& out) {
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && std::isfinite(out);
}

bool is_word_command(std::string_view token) {
    if (token.size() < 2 || !std::isalpha(static_cast<unsigned char>(token.front()))) {
        return false;
    }
    double unused = 0.0;
    return parse_number(token.substr(1), unused);
}

bool is_identifier(std::string_view token) {
    if (token.empty()) return false;
    const auto c0 = static_cast<unsigned char>(token.front());
    if (!std::isalpha(c0) && c0 != '_') return false;
    for (const char c : token) {
        const auto u = static_cast<unsigned char>(c);
        if (!std::isalnum(u) && c != '_') return false;
    }
    return true;
}

// Commands whose remainder is free text rather than parameter words.
bool is_message_command(std::string_view cmd) {
    return cmd == "M117" || cmd == "M118" || cmd == "M23" || cmd == "M28" || cmd == "M30" ||
           cmd == "M32" || cmd == "M36" || cmd == "M928";
}

}  // namespace

void Box2::expand(double x, double y) {
    if (empty) {
        min_x = max_x = x;
        min_y = max_y = y;
        empty = false;
        return;
    }
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
}

bool Box2::intersects(const Box2& other) const {
    if (empty || other.empty) return false;
    return min_x <= other.max_x && other.min_x <= max_x && min_y <= other.max_y &&
           other.min_y <= max_y;
}

std::optional<double> GcodeLine::param(char letter) const {
    const auto it = params.find(letter);
    if (it == params.end()) return std::nullopt;
    return it->second;
}

Span LayerSegment::extrusion_span() const {
    if (sub_segments.empty()) return {line_span.begin, line_span.begin};
    return {sub_segments.front().begin, sub_segments.back().end};
}

Box2 GcodeDocument::model_bounds() const {
    Box2 box;
    for (const auto& layer : layers) {
        if (layer.extrusion_bounds.empty) continue;
        box.expand(layer.extrusion_bounds.min_x, layer.extrusion_bounds.min_y);
        box.expand(layer.extrusion_bounds.max_x, layer.extrusion_bounds.max_y);
    }
    return box;
}

GcodeLine parse_line(std::string_view text, std::size_t line_number) {
    GcodeLine line;
    line.raw_text = std::string(text);

    std::string_view body = text;
    if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
    if (const auto semi = body.find(';'); semi != std::string_view::npos) {
        line.comment = std::string(body.substr(semi + 1));
        body = body.substr(0, semi);
    }

    auto tokens = split_ws(body);
    std::size_t pos = 0;
    if (pos < tokens.size() && tokens[pos].size() > 1 &&
        (tokens[pos].front() == 'N' || tokens[pos].front() == 'n') && is_word_command(tokens[pos])) {
        ++pos;  // line number word
    }
    if (pos >= tokens.size()) return line;

    const auto head = tokens[pos++];
    if (is_word_command(head)) {
        auto cmd = to_upper(head);
        line.command = cmd;
        if (is_message_command(cmd)) return line;
        for (; pos < tokens.size(); ++pos) {
            const auto tok = tokens[pos];
            if (tok.front() == '*') break;  // checksum
            if (!std::isalpha(static_cast<unsigned char>(tok.front()))) {
                throw ParseError(line_number, "unexpected token '" + std::string(tok) + "'");
            }
            const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(tok.front())));
            double value = 0.0;
            if (tok.size() > 1 && !parse_number(tok.substr(1), value)) {
                throw ParseError(line_number, "malformed numeric parameter '" + std::string(tok) + "'");
            }
            line.params[letter] = value;
        }
        return line;
    }

    if (is_identifier(head)) {
        line.command = to_upper(head);
        for (; pos < tokens.size(); ++pos) {
            const auto tok = tokens[pos];
            const auto eq = tok.find('=');
            if (eq == std::string_view::npos) {
                line.args.emplace_back(to_upper(tok), std::string{});
            } else {
                line.args.emplace_back(to_upper(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
            }
        }
        return line;
    }

    // Anything else is carried verbatim.
    return line;
}

GcodeDocument parse(std::string_view text) {
    GcodeDocument doc;
    doc.source_digest = sha256_hex(text);
    if (text.empty()) return doc;

    doc.trailing_newline = text.back() == '\n';
    std::size_t start = 0;
    std::size_t number = 1;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        doc.lines.push_back(parse_line(text.substr(start, nl - start), number++));
        start = nl + 1;
    }
    return doc;
}

std::string serialize(const GcodeDocument& doc) {
    std::string out;
    std::size_t total = 0;
    for (const auto& l : doc.lines) total += l.raw_text.size() + 1;
    out.reserve(total);
    for (std::size_t i = 0; i < doc.lines.size(); ++i) {
        out += doc.lines[i].raw_text;
        if (i + 1 < doc.lines.size() || doc.trailing_newline) out += '\n';
    }
    return out;
}

std::vector<MotionState> replay_motion(const GcodeDocument& doc) {
    std::vector<MotionState> states;
    states.reserve(doc.lines.size());
    MotionState s;
    for (const auto& line : doc.lines) {
        if (line.command) {
            const auto& c = *line.command;
            if (c == "G90") {
                s.absolute_xyz = true;
                s.absolute_e = true;
            } else if (c == "G91") {
                s.absolute_xyz = false;
                s.absolute_e = false;
            } else if (c == "M82") {
                s.absolute_e = true;
            } else if (c == "M83") {
                s.absolute_e = false;
            } else if (c == "G92") {
                if (auto v = line.param('X')) s.x = *v;
                if (auto v = line.param('Y')) s.y = *v;
                if (auto v = line.param('Z')) s.z = *v;
                if (auto v = line.param('E')) s.e = *v;
            } else if (line.is_move()) {
                auto axis = [&](char a, double& cur) {
                    if (auto v = line.param(a)) cur = s.absolute_xyz ? *v : cur + *v;
                };
                axis('X', s.x);
                axis('Y', s.y);
                axis('Z', s.z);
                if (auto v = line.param('E')) s.e = s.absolute_e ? *v : s.e + *v;
                if (auto v = line.param('F')) s.feedrate = *v;
            }
        }
        states.push_back(s);
    }
    return states;
}

}  // namespace printloop::gcode
