#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "prslab/error.hpp"

namespace prslab {

// Deterministic CSV emission: numbers are printed with %.9g so re-running
// an analysis yields byte-identical artifacts.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        require(out_.good(), ErrorKind::io, "cannot write " + path);
    }

    void header(const std::vector<std::string>& cols) { row_strings(cols); }

    CsvWriter& field(const std::string& s) {
        sep();
        out_ << s;
        return *this;
    }
    CsvWriter& field(int v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(long v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(std::size_t v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        sep();
        out_ << buf;
        return *this;
    }
    CsvWriter& field(bool v) {
        sep();
        out_ << (v ? 1 : 0);
        return *this;
    }

    void end_row() {
        out_ << '\n';
        first_ = true;
    }

    void row_strings(const std::vector<std::string>& cols) {
        for (const auto& c : cols) field(c);
        end_row();
    }

  private:
    void sep() {
        if (!first_) out_ << ',';
        first_ = false;
    }

    std::ofstream out_;
    bool first_ = true;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace prslab
