use std::path::Path;
use std::process::Command;

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/picardnet.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    for symbol in ["pn_network_realize", "pn_build_mlp_network", "pn_mlp_estimate", "PN_STATUS_RESOURCE_GUARD"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(&header).output()
        else {
            eprintln!("{compiler} not available, skipping");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
