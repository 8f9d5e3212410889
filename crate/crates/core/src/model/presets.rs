//! Named architecture presets.
//!
//! `xcat-baseline` is the reference network. Letters `A`..`M` are the ablation
//! variants of the first ablation table; `t3-*` are the cross versus straight
//! concatenation rows, named `t3-<x>x<y>-m<blocks>-<cross|straight>`.
//!
//! | name | blocks | split | kernels | change vs baseline |
//! |------|--------|-------|---------|--------------------|
//! | A | 2 | 21/7 | 1x1/3x3 | none (single-stage training only) |
//! | B | 2 | 21/7 | 1x1/3x3 | cross concat replaced by 1x1 conv |
//! | C | 2 | 21/7 | 3x3/3x3 | cross concat replaced by 1x1 conv |
//! | D | 2 | - | - | each block is a plain 28->28 3x3 conv |
//! | E | 4 | 21/7 | 1x1/3x3 | |
//! | F | 4 | 21/7 | 1x1/3x3 | post-block conv 3x3 -> 1x1 |
//! | G | 4 | 21/7 | 1x1/3x3 | post-block conv removed |
//! | H | 4 | 16/12 | 1x1/3x3 | post-block conv removed |
//! | I | 4 | 7/21 | 1x1/3x3 | post-block conv removed |
//! | J | 4 | 7/21 | 3x3/3x3 | post-block conv removed |
//! | K | 3 | 7/21 | 1x1/3x3 | post-block conv removed |
//! | L | 4 | 16/4 | 1x1/3x3 | post-block conv removed |
//! | M | 4 | 16/4 | 1x1/3x3 | additive merge replaced by concat |

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{BlockKind, MergeMode, MixMode, PostBlockConv, XcatConfig};

pub const BASELINE: &str = "xcat-baseline";

fn variant(blocks: usize, split: (usize, usize), kernels: (usize, usize)) -> XcatConfig {
    XcatConfig {
        blocks,
        split,
        branch_kernels: kernels,
        ..XcatConfig::default()
    }
}

fn no_post(c: XcatConfig) -> XcatConfig {
    XcatConfig {
        post_block_conv: PostBlockConv::None,
        ..c
    }
}

/// Ablation-table letters in order.
pub const TABLE1_ROWS: [&str; 13] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M",
];

/// `(split, blocks)` pairs of the concatenation comparison table.
pub const TABLE3_ROWS: [((usize, usize), usize); 6] = [
    ((21, 7), 2),
    ((21, 7), 4),
    ((21, 7), 8),
    ((21, 7), 12),
    ((24, 8), 6),
    ((56, 8), 4),
];

pub fn table1(row: &str) -> Option<XcatConfig> {
    let base = XcatConfig::default();
    Some(match row {
        "A" => base,
        "B" => XcatConfig {
            mix_mode: MixMode::Conv1x1,
            ..base
        },
        "C" => XcatConfig {
            mix_mode: MixMode::Conv1x1,
            branch_kernels: (3, 3),
            ..base
        },
        "D" => XcatConfig {
            block_kind: BlockKind::PlainConv3x3,
            ..base
        },
        "E" => variant(4, (21, 7), (1, 3)),
        "F" => XcatConfig {
            post_block_conv: PostBlockConv::Conv1x1,
            ..variant(4, (21, 7), (1, 3))
        },
        "G" => no_post(variant(4, (21, 7), (1, 3))),
        "H" => no_post(variant(4, (16, 12), (1, 3))),
        "I" => no_post(variant(4, (7, 21), (1, 3))),
        "J" => no_post(variant(4, (7, 21), (3, 3))),
        "K" => no_post(variant(3, (7, 21), (1, 3))),
        "L" => no_post(variant(4, (16, 4), (1, 3))),
        "M" => XcatConfig {
            merge_mode: MergeMode::Concat,
            ..variant(4, (16, 4), (1, 3))
        },
        _ => return None,
    })
}

pub fn table3_name(split: (usize, usize), blocks: usize, cross: bool) -> String {
    format!(
        "t3-{}x{}-m{}-{}",
        split.0,
        split.1,
        blocks,
        if cross { "cross" } else { "straight" }
    )
}

pub fn table3(split: (usize, usize), blocks: usize, cross: bool) -> XcatConfig {
    XcatConfig {
        mix_mode: if cross {
            MixMode::CrossConcat
        } else {
            MixMode::StraightConcat
        },
        ..variant(blocks, split, (1, 3))
    }
}

/// Every preset name, baseline first.
pub fn names() -> Vec<String> {
    let mut out = Vec::new();
    out.push(String::from(BASELINE));
    out.extend(TABLE1_ROWS.iter().map(|r| String::from(*r)));
    for (split, m) in TABLE3_ROWS {
        for cross in [true, false] {
            out.push(table3_name(split, m, cross));
        }
    }
    out
}

/// Looks up a preset; letters are case-insensitive and `xcat` aliases the
/// baseline.
pub fn preset(name: &str) -> Option<XcatConfig> {
    if name == BASELINE || name == "xcat" {
        return Some(XcatConfig::default());
    }
    if name.len() == 1 {
        return table1(&name.to_ascii_uppercase());
    }
    TABLE3_ROWS.iter().find_map(|&(split, m)| {
        [true, false]
            .into_iter()
            .find(|&cross| table3_name(split, m, cross) == name)
            .map(|cross| table3(split, m, cross))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves_and_validates() {
        let names = names();
        assert_eq!(names.len(), 1 + 13 + 12);
        for n in &names {
            let cfg = preset(n).unwrap_or_else(|| panic!("{n}"));
            cfg.validate().unwrap();
        }
        assert_eq!(preset("xcat"), Some(XcatConfig::default()));
        assert_eq!(preset("c"), table1("C"));
        assert!(preset("Z").is_none());
        assert!(preset("t3-21x7-m3-cross").is_none());
    }

    #[test]
    fn baseline_table3_row_is_baseline() {
        assert_eq!(preset("t3-21x7-m2-cross"), Some(XcatConfig::default()));
        assert_eq!(preset("L").unwrap().rotation_amount(), 5);
    }
}
