#include "transid/geometry.hpp"

#include "transid/errors.hpp"

#include <charconv>

namespace transid {

namespace {

void put(std::string& out, double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

void put_quad(std::string& out, const Quad& q)
{
    for (const Vec2& v : q) {
        out += ' ';
        put(out, v.x);
        out += ' ';
        put(out, v.y);
    }
}

class Tokens {
public:
    explicit Tokens(std::string_view line) : rest_(line) {}

    std::string_view word()
    {
        while (!rest_.empty() && (rest_.front() == ' ' || rest_.front() == '\t'))
            rest_.remove_prefix(1);
        std::size_t n = 0;
        while (n < rest_.size() && rest_[n] != ' ' && rest_[n] != '\t')
            ++n;
        if (n == 0)
            throw FormatError("geometry text: unexpected end of line");
        const auto w = rest_.substr(0, n);
        rest_.remove_prefix(n);
        return w;
    }

    double number()
    {
        const auto w = word();
        double v = 0.0;
        const auto res = std::from_chars(w.data(), w.data() + w.size(), v);
        if (res.ec != std::errc{} || res.ptr != w.data() + w.size())
            throw FormatError("geometry text: bad number '" + std::string(w) + "'");
        return v;
    }

    std::size_t index()
    {
        const auto w = word();
        std::size_t v = 0;
        const auto res = std::from_chars(w.data(), w.data() + w.size(), v);
        if (res.ec != std::errc{} || res.ptr != w.data() + w.size())
            throw FormatError("geometry text: bad index '" + std::string(w) + "'");
        return v;
    }

    Quad quad()
    {
        Quad q;
        for (Vec2& v : q) {
            v.x = number();
            v.y = number();
        }
        return q;
    }

private:
    std::string_view rest_;
};

} // namespace

std::string to_text(const SliceGeometry& geom)
{
    std::string out = "# transid-geometry 1\n# size ";
    put(out, geom.size.x);
    out += ' ';
    put(out, geom.size.y);
    out += ' ';
    put(out, geom.size.z);
    out += "\n# center ";
    put(out, geom.center.x);
    out += ' ';
    put(out, geom.center.y);
    out += "\n# shell ";
    put(out, geom.shell.thickness);
    out += "\n# outer";
    put_quad(out, geom.shell.outer);
    out += '\n';
    if (geom.shell.inner) {
        out += "# inner";
        put_quad(out, *geom.shell.inner);
        out += '\n';
    }
    for (std::size_t i = 0; i < geom.layers.size(); ++i) {
        out += "# layer " + std::to_string(i) + ' ';
        put(out, geom.layers[i].z_low);
        out += ' ';
        put(out, geom.layers[i].z_high);
        out += '\n';
    }
    for (std::size_t i = 0; i < geom.layers.size(); ++i) {
        for (const Strut& s : geom.layers[i].struts) {
            out += std::to_string(i);
            for (double v : {s.p0.x, s.p0.y, s.p1.x, s.p1.y, s.width}) {
                out += ' ';
                put(out, v);
            }
            out += '\n';
        }
    }
    return out;
}

SliceGeometry geometry_from_text(std::string_view text)
{
    SliceGeometry g;
    bool saw_magic = false;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = (nl == std::string_view::npos) ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;

        if (line.front() == '#') {
            Tokens t(line.substr(1));
            const auto key = t.word();
            if (key == "transid-geometry") {
                if (t.index() != 1)
                    throw FormatError("geometry text: unsupported version");
                saw_magic = true;
            } else if (key == "size") {
                g.size = {t.number(), t.number(), t.number()};
            } else if (key == "center") {
                g.center = {t.number(), t.number()};
            } else if (key == "shell") {
                g.shell.thickness = t.number();
            } else if (key == "outer") {
                g.shell.outer = t.quad();
            } else if (key == "inner") {
                g.shell.inner = t.quad();
            } else if (key == "layer") {
                const std::size_t i = t.index();
                if (i != g.layers.size())
                    throw FormatError("geometry text: layers out of order");
                Layer layer;
                layer.z_low = t.number();
                layer.z_high = t.number();
                g.layers.push_back(std::move(layer));
            }
            continue;
        }

        Tokens t(line);
        const std::size_t i = t.index();
        if (i >= g.layers.size())
            throw FormatError("geometry text: strut references unknown layer " + std::to_string(i));
        Strut s;
        s.p0.x = t.number();
        s.p0.y = t.number();
        s.p1.x = t.number();
        s.p1.y = t.number();
        s.width = t.number();
        g.layers[i].struts.push_back(s);
    }
    if (!saw_magic)
        throw FormatError("geometry text: missing '# transid-geometry 1' header");
    return g;
}

} // namespace transid
