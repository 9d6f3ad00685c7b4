// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>

#include "lwlm/autograd.hpp"
#include "lwlm/layers.hpp"

namespace lwlm::embed {

using nn::Graph;
using nn::Matrix;
using nn::Value;

/// Two-channel real view of a complex CFR, stacked vertically:
/// rows [0, n_ant) hold |H|, rows [n_ant, 2*n_ant) hold the phase in
/// (-pi, pi], with the phase of an exact zero defined as 0.
Matrix split_mag_phase(const Eigen::MatrixXcd& cfr);

/// Inverse of split_mag_phase (mag * exp(j*phase)), for round-trip tests.
Eigen::MatrixXcd merge_mag_phase(const Matrix& planes, int n_ant);

/// Real/imaginary two-channel view with the same stacked layout, used by the
/// reconstruction decoders whose output channels are Re and Im.
Matrix split_re_im(const Eigen::MatrixXcd& cfr);
Eigen::MatrixXcd merge_re_im(const Matrix& planes, int n_ant);

int patch_count(int n_ant, int n_subc, int kernel, int stride, int padding);

/// Precomputed unfold geometry for a 2-channel image. Patches are flattened
/// antenna-major (patch = r_out * cols_out + c_out) and each window is
/// flattened channel-major, then row-major. The same index map drives the
/// fold adjoint; fold_multiplicity counts how many windows cover each pixel.
struct PatchGrid {
  int n_ant = 0, n_subc = 0, kernel = 0, stride = 0, padding = 0;
  int rows_out = 0, cols_out = 0, n_patch = 0, window = 0;
  Eigen::MatrixXi gather_map;   // n_patch x window, flat row-major index into [2*n_ant x n_subc], -1 = zero pad
  Matrix fold_multiplicity;     // 2*n_ant x n_subc

  static PatchGrid make(int n_ant, int n_subc, int kernel, int stride, int padding);
};

/// Unfold to [n_patch x window] patch rows.
Value unfold(Graph& g, Value planes, const PatchGrid& grid);

/// Overlap-sum adjoint of unfold: [n_patch x window] -> [2*n_ant x n_subc].
Value fold(Graph& g, Value patch_rows, const PatchGrid& grid);

/// 2D convolution as unfold + linear map; conv.w is n_embed x window.
Value patch_embed(Graph& g, Value planes, const PatchGrid& grid, const nn::LinearLayer& conv);

/// Pure-forward convenience wrapper around patch_embed.
Matrix patch_embed_forward(const Matrix& planes, const PatchGrid& grid,
                           const nn::LinearLayer& conv);

/// Sinusoidal sequence embedding: [E]_{seq,2i} = sin(seq / 10000^{2i/n_embed}),
/// [E]_{seq,2i+1} = cos(seq / 10000^{2i/n_embed}). n_embed must be even.
Matrix sequence_embedding(int length, int n_embed);

/// tokens = concat(lst_row, patches) + seq_emb; row 0 is the LST slot.
Value assemble_sequence(Graph& g, Value patches, Value lst_row, const Matrix& seq_emb);
Matrix assemble_sequence_forward(const Matrix& patches, const Matrix& lst_row,
                                 const Matrix& seq_emb);

}  // namespace lwlm::embed
