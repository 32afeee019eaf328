#pragma once

// Shared targets and reference values for the test binaries. Reference
// coefficient vectors were computed with an independent implementation
// and are frozen here at full precision.

#include "qbrach/liealg.hpp"

namespace qbrach::testing {

// Two-qubit target of the worked example, already unitary to machine
// precision and projected to SU(4).
inline Matrix example1_target() {
  Matrix u(4, 4);
  u.row(0) << Complex(-0.14792551611703564, 0.35622914881861489),
      Complex(0.047673147550671001, -0.13032991413210296),
      Complex(0.050775841477441332, -0.73438692296185948),
      Complex(-0.1363870575205629, -0.52101482852617231);
  u.row(1) << Complex(-0.085670257388348631, 0.33569656716396862),
      Complex(-0.42679540465910709, 0.063492865666154752),
      Complex(0.54096021292213281, 0.12759068980790247),
      Complex(-0.57879390032241629, 0.22330034756770861);
  u.row(2) << Complex(-0.77053584550502763, 0.07349791897366835),
      Complex(-0.16538441875288165, 0.47088819980075819),
      Complex(-0.36016989022719242, -0.034305147828861481),
      Complex(0.039708113041878525, 0.13895660036641216);
  u.row(3) << Complex(0.34418739638324575, -0.11659699771490577),
      Complex(-0.24790228536764441, 0.69571005259948004),
      Complex(0.037156786445778654, 0.13000194399180798),
      Complex(-0.0088226662738452224, -0.55146458114326335);
  return u;
}

inline Matrix cnot() {
  Matrix u = Matrix::Zero(4, 4);
  u(0, 0) = 1;
  u(1, 1) = 1;
  u(2, 3) = 1;
  u(3, 2) = 1;
  return u;
}

// Branches of the example target with norm <= 4.1, ascending.
inline Vector branch1_coeffs() {
  Vector c(15);
  c << 0.18658665556235732, 0.52097359976662838, 0.85877198815071321,
      0.45845409980505386, 0.53970450687284466, 1.1584067972086745,
      0.32740326111316964, -0.37977374880626347, -0.93540702684792709,
      -1.4261331378390474, 0.24928335853080913, 1.0105754968419722,
      1.0149078101744498, -0.036467306010600165, 0.35002395907743256;
  return c;
}

inline Vector branch2_coeffs() {
  Vector c(15);
  c << 1.821276449903926, -1.7731005088413727, 0.063544819607601444,
      -0.23058423489942248, -1.3681165743933628, -0.95176331069331521,
      -0.73587341817581864, -0.097942080857837233, -0.013385994700360504,
      0.29927727794181691, -1.0188070611616664, -0.046265016382255497,
      -0.65172686808962355, 0.1107525196229006, -1.0329463739102014;
  return c;
}

inline Vector branch3_coeffs() {
  Vector c(15);
  c << -2.1905747560691298, 1.4692237354563944, -0.5135536511194424,
      -0.18501113020841864, -0.46915105661397238, -1.4876308644222245,
      1.4182240687790935, 0.3120967997863715, 0.14235218213751222,
      0.69478314380608741, 0.87942679865578133, -1.0264080461514058,
      0.1525703252479933, -0.19746779189274355, 0.037369183595680006;
  return c;
}

inline Vector branch4_coeffs() {
  Vector c(15);
  c << -0.42316872296956998, -0.33227298673110039, -1.3300601327961563,
      -0.44899925683283892, 1.2507165374938016, 0.51440886751327319,
      -1.2808996407024569, 0.58814998390406104, 1.8405937081371193,
      1.8335407797543111, -0.12437380803642872, -0.92620103473868598,
      -1.4320440262124849, 0.14770350069422958, 0.62656195462267184;
  return c;
}

// Branch-3 geodesic seed continued to q=100; |h| = 6.2346256.
inline Vector branch3_h100() {
  Vector c(15);
  c << -1.7648278147683565, 3.8926053695696106, -1.145163189479744,
      0.49929931432148772, -2.4917251929127473, -0.015058185745727167,
      -3.5777430826222472, 0.019163774304270395, -0.024552258135532155,
      0.042108506424145022, -0.077386100575137576, -0.14654805355158151,
      -0.035617994550719831, 0.0019201246003701631, 0.047083735862371183;
  return c;
}

// Converged brachistochrone root for the example target, continued from
// branch 3. First 7 entries mu, last 8 lambda; |mu| = 6.694115.
inline Vector branch3_qbe_root() {
  Vector x(15);
  x << -1.0111561256249322, 4.2997935153539171, -0.86725212564789578,
      0.13748463826728366, -2.8829236150663329, 0.24786490652384316,
      -4.0195518098440655, 3.3528214274472443, -3.0357732388648553,
      3.5788121360029805, -6.7593722500337847, -9.7619523346655797,
      -2.7137809002295072, 0.092596284911360058, 5.9393840905192814;
  return x;
}

}  // namespace qbrach::testing
