//! Inputs shared by the benchmarks.

use assertforge::trainmath::TokenTriple;
use assertforge::SourceUnit;

/// A synthetic design of roughly `lines` lines mixing continuous
/// assignments, a clocked block and a case statement.
pub fn synthetic_design(lines: usize) -> SourceUnit {
    let mut text = String::from(
        "module bench(input clk, input rst, input [7:0] a, input [7:0] b, input [1:0] sel, output reg [7:0] q);\n",
    );
    let mut i = 0;
    while text.lines().count() + 12 < lines {
        text.push_str(&format!("  wire [7:0] w{i} = (a & b) + 8'd{};\n", i % 200));
        i += 1;
    }
    text.push_str(
        "  always @(posedge clk) begin\n    if (rst) q <= 8'd0;\n    else if (a > b) q <= a - b;\n    else q <= b ^ a;\n  end\n",
    );
    text.push_str(
        "  reg [7:0] m;\n  always @(*) begin\n    case (sel)\n      2'd0: m = a | b;\n      default: m = a << 1;\n    endcase\n  end\n",
    );
    text.push_str("endmodule\n");
    SourceUnit::new("bench", "bench.v", text)
}

/// Deterministic preference triples over a vocabulary of `vocab` tokens.
pub fn triples(vocab: usize, count: usize, len: usize) -> Vec<TokenTriple> {
    let seq = |seed: usize| -> Vec<usize> { (0..len).map(|j| (seed * 31 + j * 7) % vocab).collect() };
    (0..count).map(|i| TokenTriple { x: seq(3 * i), p: seq(3 * i + 1), n: seq(3 * i + 2) }).collect()
}
