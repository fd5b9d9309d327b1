#pragma once

#include <cmath>
#include <ostream>

namespace shf {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(Point, Point) = default;
    friend std::ostream& operator<<(std::ostream& os, Point p) {
        return os << '(' << p.x << ", " << p.y << ')';
    }
};

constexpr double norm2(Point p) { return p.x * p.x + p.y * p.y; }
inline double norm(Point p) { return std::hypot(p.x, p.y); }

} // namespace shf
