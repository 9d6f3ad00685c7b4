// SPDX-License-Identifier: Apache-2.0
#include "lwlm/embedding.hpp"

#include <cmath>
#include <stdexcept>

namespace lwlm::embed {

Matrix split_mag_phase(const Eigen::MatrixXcd& cfr) {
  const int n_ant = static_cast<int>(cfr.rows());
  const int n_subc = static_cast<int>(cfr.cols());
  Matrix out(2 * n_ant, n_subc);
  for (int j = 0; j < n_subc; ++j)
    for (int i = 0; i < n_ant; ++i) {
      const std::complex<double> h = cfr(i, j);
      out(i, j) = std::abs(h);
      out(n_ant + i, j) = (h == std::complex<double>(0.0, 0.0)) ? 0.0 : std::arg(h);
    }
  return out;
}

Eigen::MatrixXcd merge_mag_phase(const Matrix& planes, int n_ant) {
  if (planes.rows() != 2 * n_ant) throw std::invalid_argument("merge_mag_phase: bad layout");
  Eigen::MatrixXcd out(n_ant, planes.cols());
  for (int j = 0; j < planes.cols(); ++j)
    for (int i = 0; i < n_ant; ++i)
      out(i, j) = std::polar(planes(i, j), planes(n_ant + i, j));
  return out;
}

Matrix split_re_im(const Eigen::MatrixXcd& cfr) {
  const int n_ant = static_cast<int>(cfr.rows());
  Matrix out(2 * n_ant, cfr.cols());
  out.topRows(n_ant) = cfr.real();
  out.bottomRows(n_ant) = cfr.imag();
  return out;
}

Eigen::MatrixXcd merge_re_im(const Matrix& planes, int n_ant) {
  if (planes.rows() != 2 * n_ant) throw std::invalid_argument("merge_re_im: bad layout");
  Eigen::MatrixXcd out(n_ant, planes.cols());
  out.real() = planes.topRows(n_ant);
  out.imag() = planes.bottomRows(n_ant);
  return out;
}

int patch_count(int n_ant, int n_subc, int kernel, int stride, int padding) {
  if (n_ant + 2 * padding < kernel || n_subc + 2 * padding < kernel)
    throw std::invalid_argument("patch_count: kernel larger than padded input");
  const int rows_out = (n_ant + 2 * padding - kernel) / stride + 1;
  const int cols_out = (n_subc + 2 * padding - kernel) / stride + 1;
  return rows_out * cols_out;
}

PatchGrid PatchGrid::make(int n_ant, int n_subc, int kernel, int stride, int padding) {
  PatchGrid grid;
  grid.n_ant = n_ant;
  grid.n_subc = n_subc;
  grid.kernel = kernel;
  grid.stride = stride;
  grid.padding = padding;
  grid.n_patch = patch_count(n_ant, n_subc, kernel, stride, padding);
  grid.rows_out = (n_ant + 2 * padding - kernel) / stride + 1;
  grid.cols_out = (n_subc + 2 * padding - kernel) / stride + 1;
  grid.window = 2 * kernel * kernel;
  grid.gather_map.setConstant(grid.n_patch, grid.window, -1);
  grid.fold_multiplicity.setZero(2 * n_ant, n_subc);
  for (int pr = 0; pr < grid.rows_out; ++pr)
    for (int pc = 0; pc < grid.cols_out; ++pc) {
      const int patch = pr * grid.cols_out + pc;
      for (int ch = 0; ch < 2; ++ch)
        for (int dr = 0; dr < kernel; ++dr)
          for (int dc = 0; dc < kernel; ++dc) {
            const int row = pr * stride - padding + dr;
            const int col = pc * stride - padding + dc;
            if (row < 0 || row >= n_ant || col < 0 || col >= n_subc) continue;
            const int q = (ch * kernel + dr) * kernel + dc;
            grid.gather_map(patch, q) = (ch * n_ant + row) * n_subc + col;
            if (ch == 0) {
              grid.fold_multiplicity(row, col) += 1.0;
              grid.fold_multiplicity(n_ant + row, col) += 1.0;
            }
          }
    }
  return grid;
}

Value unfold(Graph& g, Value planes, const PatchGrid& grid) {
  if (g.val(planes).rows() != 2 * grid.n_ant || g.val(planes).cols() != grid.n_subc)
    throw std::invalid_argument("unfold: input shape does not match grid");
  return g.index_gather(planes, grid.gather_map, grid.n_patch, grid.window);
}

Value fold(Graph& g, Value patch_rows, const PatchGrid& grid) {
  if (g.val(patch_rows).rows() != grid.n_patch || g.val(patch_rows).cols() != grid.window)
    throw std::invalid_argument("fold: input shape does not match grid");
  return g.index_scatter_add(patch_rows, grid.gather_map, 2 * grid.n_ant, grid.n_subc);
}

Value patch_embed(Graph& g, Value planes, const PatchGrid& grid, const nn::LinearLayer& conv) {
  if (conv.w.value.cols() != grid.window)
    throw std::invalid_argument("patch_embed: conv weights do not match window size");
  return conv.apply(g, unfold(g, planes, grid));
}

Matrix patch_embed_forward(const Matrix& planes, const PatchGrid& grid,
                           const nn::LinearLayer& conv) {
  Graph g;
  return g.val(patch_embed(g, g.constant(planes), grid, conv));
}

Matrix sequence_embedding(int length, int n_embed) {
  if (n_embed % 2 != 0) throw std::invalid_argument("sequence_embedding: n_embed must be even");
  Matrix e(length, n_embed);
  for (int seq = 0; seq < length; ++seq)
    for (int i = 0; i < n_embed / 2; ++i) {
      const double rate = std::pow(10000.0, 2.0 * i / static_cast<double>(n_embed));
      e(seq, 2 * i) = std::sin(seq / rate);
      e(seq, 2 * i + 1) = std::cos(seq / rate);
    }
  return e;
}

Value assemble_sequence(Graph& g, Value patches, Value lst_row, const Matrix& seq_emb) {
  if (g.val(lst_row).rows() != 1 || g.val(lst_row).cols() != g.val(patches).cols())
    throw std::invalid_argument("assemble_sequence: LST row width mismatch");
  if (seq_emb.rows() != g.val(patches).rows() + 1 || seq_emb.cols() != g.val(patches).cols())
    throw std::invalid_argument("assemble_sequence: sequence embedding shape mismatch");
  Value tokens = g.concat_rows({lst_row, patches});
  return g.add(tokens, g.constant(seq_emb));
}

Matrix assemble_sequence_forward(const Matrix& patches, const Matrix& lst_row,
                                 const Matrix& seq_emb) {
  Graph g;
  return g.val(assemble_sequence(g, g.constant(patches), g.constant(lst_row), seq_emb));
}

}  // namespace lwlm::embed
